//! The `patchnr` command line.
//!
//! Every stochastic command takes a mandatory `--seed`; with the same
//! inputs, config and seed the outputs are byte-identical. Each output file
//! gets a `<stem>.manifest.json` next to it holding the argv, the effective
//! configuration and its SHA-256, input digests and any metrics.
//!
//! Exit codes: 0 on success, 2 on usage errors (including invalid
//! configurations), 1 on runtime failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::validation_suite;
use crate::error::Error;
use crate::flow::{train_cflow, train_flow, FlowArch, TrainConfig};
use crate::io::config::{OperatorConfig, PriorKind};
use crate::io::{load_checkpoint, read_image, save_checkpoint, write_image, ExperimentConfig, Model, Preset, Task};
use crate::metrics::{evaluate, nll_histogram, separation, RangeMode};
use crate::operators::{fbp, simulate_observation, FbpFilter, RadonGeometry, DEFAULT_FREQUENCY_SCALING};
use crate::patchops::{extract_patches, PatchGeometry};
use crate::priors::{gmm_fit, CPatchNr, EmConfig, Epll, PatchPrior, PatchNr};
use crate::solver::{reconstruct, Initialization, SubsetPolicy};
use crate::synth::{shepp_logan, texture};
use crate::Image;

#[derive(Debug, Parser)]
#[command(name = "patchnr", version, about = "Patch normalizing-flow priors for image reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a patch flow on example images.
    TrainFlow(TrainFlowArgs),
    /// Train a conditional patch flow on (image, naive reconstruction) pairs.
    TrainCflow(TrainCflowArgs),
    /// Fit a Gaussian mixture to example patches (EPLL baseline).
    FitGmm(FitGmmArgs),
    /// Simulate a noisy observation of an image.
    Degrade(DegradeArgs),
    /// Variational reconstruction with a patch prior.
    Reconstruct(ReconstructArgs),
    /// Filtered backprojection of a sinogram.
    Fbp(FbpArgs),
    /// PSNR, SSIM and blur effect against a reference, as CSV.
    Evaluate(EvaluateArgs),
    /// Patch negative log-likelihoods under a trained flow.
    ScorePatches(ScoreArgs),
    /// Numerical checks of the induced patch and image densities.
    Analysis(AnalysisArgs),
    /// List the built-in task presets.
    Presets(PresetArgs),
}

/// Task preset or a TOML config; flags override either.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TaskArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = 6)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct TrainFlowArgs {
    /// Training image (PFM or PNG); repeatable.
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainCflowArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitGmmArgs {
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub patch_size: usize,
    #[arg(long, default_value_t = crate::priors::DEFAULT_COMPONENTS)]
    pub components: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Use every `stride`-th patch.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct SourceArgs {
    /// Ground-truth image.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Generate a synthetic NxN texture as ground truth.
    #[arg(long, value_name = "N")]
    pub make_texture: Option<usize>,
    /// Generate an NxN Shepp-Logan phantom as ground truth.
    #[arg(long, value_name = "N")]
    pub make_phantom: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Where to write a generated ground truth.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriorArg {
    None,
    Patchnr,
    Cpatchnr,
    Epll,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Zeros,
    Naive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RangeArg {
    Unit,
    Adaptive,
}

impl From<RangeArg> for RangeMode {
    fn from(r: RangeArg) -> Self {
        match r {
            RangeArg::Unit => RangeMode::Unit,
            RangeArg::Adaptive => RangeMode::Adaptive,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Observation (PFM).
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Image side length; required for CT.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Patches per iteration; 0 means all.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Clamp the result to [0, 1].
    #[arg(long)]
    pub clamp: bool,
    /// Ground truth; adds metrics to the manifest.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub crop: usize,
    #[arg(long, value_enum, default_value = "unit")]
    pub range: RangeArg,
    /// Write the objective trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Stream the objective to stderr.
    #[arg(long)]
    pub progress: bool,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    RamLak,
    Hann,
}

#[derive(Debug, Args)]
pub struct FbpArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub sino: PathBuf,
    #[arg(long)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "hann")]
    pub filter: FilterArg,
    #[arg(long, default_value_t = DEFAULT_FREQUENCY_SCALING)]
    pub scaling: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub crop: usize,
    #[arg(long, value_enum, default_value = "unit")]
    pub range: RangeArg,
    /// Also write the CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Flow checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    /// Degraded counterparts to compare against.
    #[arg(long = "compare")]
    pub compare: Vec<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Write the histograms as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Divide every sample count by this factor.
    #[arg(long, default_value_t = 1)]
    pub scale_down: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PresetArgs {
    /// Print one preset as a TOML config instead of the table.
    #[arg(long)]
    pub name: Option<String>,
}

/// A failed command: the module that failed and whether it was a usage error.
#[derive(Debug)]
pub struct Failure {
    pub module: &'static str,
    pub usage: bool,
    pub error: Error,
}

trait Within<T> {
    fn within(self, module: &'static str) -> std::result::Result<T, Failure>;
    fn usage(self, module: &'static str) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<Error>> Within<T> for std::result::Result<T, E> {
    fn within(self, module: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure { module, usage: false, error: e.into() })
    }

    fn usage(self, module: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure { module, usage: true, error: e.into() })
    }
}

fn usage_error(module: &'static str, msg: impl Into<String>) -> Failure {
    Failure { module, usage: true, error: Error::Config(msg.into()) }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &argv) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("patchnr: {} error: {}", f.module, f.error);
            if f.usage {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(command: Command, argv: &[String]) -> Outcome {
    match command {
        Command::TrainFlow(a) => train_flow_cmd(a, argv),
        Command::TrainCflow(a) => train_cflow_cmd(a, argv),
        Command::FitGmm(a) => fit_gmm_cmd(a, argv),
        Command::Degrade(a) => degrade_cmd(a, argv),
        Command::Reconstruct(a) => reconstruct_cmd(a, argv),
        Command::Fbp(a) => fbp_cmd(a, argv),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ScorePatches(a) => score_cmd(a, argv),
        Command::Analysis(a) => analysis_cmd(a, argv),
        Command::Presets(a) => presets_cmd(a),
    }
}

fn experiment(task: &TaskArgs, seed: u64) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match (&task.task, &task.config) {
        (_, Some(path)) => ExperimentConfig::load(path).usage("config")?,
        (Some(t), None) => Preset::get(t.name()).usage("config")?.to_config(seed),
        (None, None) => return Err(usage_error("config", "either --task or --config is required")),
    };
    cfg.seed = seed;
    Ok(cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    version: &'static str,
    argv: Vec<String>,
    seed: Option<u64>,
    config: Value,
    config_hash: String,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    metrics: Value,
}

/// `dir/x.pfm` -> `dir/x.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.manifest.json"))
}

fn write_manifest(
    argv: &[String],
    seed: Option<u64>,
    config: &impl Serialize,
    inputs: &[&Path],
    outputs: &[&Path],
    metrics: Value,
) -> Outcome {
    let config = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string())).within("io")?;
    let canonical = serde_json::to_vec(&config).map_err(|e| Error::Config(e.to_string())).within("io")?;
    let mut records = Vec::new();
    for p in inputs {
        let bytes = std::fs::read(p).within("io")?;
        records.push(InputRecord { path: p.display().to_string(), sha256: sha256_hex(&bytes) });
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        argv: argv.to_vec(),
        seed,
        config,
        config_hash: sha256_hex(&canonical),
        inputs: records,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        metrics,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string())).within("io")?;
    let Some(first) = outputs.first() else { return Ok(()) };
    std::fs::write(manifest_path(first), text + "\n").within("io")
}

fn patch_side(dim: usize) -> std::result::Result<usize, Failure> {
    let p = (dim as f64).sqrt().round() as usize;
    if p * p != dim {
        return Err(usage_error("priors", format!("patch dimension {dim} is not a square")));
    }
    Ok(p)
}

fn load_patches(paths: &[PathBuf], size: usize, stride: usize) -> std::result::Result<ndarray::Array2<f64>, Failure> {
    let mut blocks = Vec::new();
    for path in paths {
        let image = read_image(path).within("io")?;
        let geom = PatchGeometry::square(image.dim(), size).usage("patchops")?;
        let idx: Vec<usize> = (0..geom.num_patches()).step_by(stride.max(1)).collect();
        blocks.push(extract_patches(&image, &geom, &idx).within("patchops")?);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string())).within("patchops")
}

#[derive(Debug, Serialize)]
struct TrainSettings {
    arch: FlowArch,
    training: TrainConfig,
    patch_size: usize,
    experiment: Option<ExperimentConfig>,
}

fn train_settings(net: &NetArgs, seed: u64, cond: bool) -> TrainSettings {
    let s = net.patch_size * net.patch_size;
    let mut arch = FlowArch::patch(s).with_blocks(net.blocks).with_hidden(net.hidden).with_seed(seed);
    if cond {
        arch = arch.with_cond_dim(s);
    }
    TrainSettings {
        arch,
        training: TrainConfig { learning_rate: net.lr, batch_size: net.batch_size, steps: net.steps, seed },
        patch_size: net.patch_size,
        experiment: None,
    }
}

fn final_loss(trace: &[f64]) -> f64 {
    let tail = &trace[trace.len().saturating_sub(100)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

fn train_flow_cmd(a: TrainFlowArgs, argv: &[String]) -> Outcome {
    let settings = train_settings(&a.net, a.seed, false);
    let patches = load_patches(&a.images, a.net.patch_size, 1)?;
    let (flow, report) = train_flow(patches.view(), settings.arch, &settings.training).within("flow")?;
    save_checkpoint(&Model::Flow(flow), &a.out).within("io")?;
    let loss = final_loss(&report.loss_trace);
    println!("trained on {} patches, final loss {loss:.4}, wrote {}", patches.nrows(), a.out.display());
    let inputs: Vec<&Path> = a.images.iter().map(PathBuf::as_path).collect();
    write_manifest(argv, Some(a.seed), &settings, &inputs, &[&a.out], json!({ "final_loss": loss }))
}

fn train_cflow_cmd(a: TrainCflowArgs, argv: &[String]) -> Outcome {
    let mut settings = train_settings(&a.net, a.seed, true);
    let cfg = experiment(&a.task, a.seed)?;
    let p = a.net.patch_size;
    let mut clean = Vec::new();
    let mut cond = Vec::new();
    for (k, path) in a.images.iter().enumerate() {
        let x = read_image(path).within("io")?;
        let op = cfg.operator.build(x.dim()).usage("operators")?;
        let y = simulate_observation(op.as_ref(), &x, cfg.noise, a.seed.wrapping_add(k as u64)).within("operators")?;
        let c = op.naive_inverse(&y).within("operators")?;
        let geom = PatchGeometry::square(x.dim(), p).usage("patchops")?;
        let idx = geom.all_indices();
        clean.push(extract_patches(&x, &geom, &idx).within("patchops")?);
        cond.push(extract_patches(&c, &geom, &idx).within("patchops")?);
    }
    let stack = |blocks: &[ndarray::Array2<f64>]| {
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))
    };
    let (clean, cond) = (stack(&clean).within("patchops")?, stack(&cond).within("patchops")?);
    let (flow, report) = train_cflow(clean.view(), cond.view(), settings.arch, &settings.training).within("flow")?;
    save_checkpoint(&Model::CFlow(flow), &a.out).within("io")?;
    let loss = final_loss(&report.loss_trace);
    println!("trained on {} pairs, final loss {loss:.4}, wrote {}", clean.nrows(), a.out.display());
    settings.experiment = Some(cfg);
    let inputs: Vec<&Path> = a.images.iter().map(PathBuf::as_path).collect();
    write_manifest(argv, Some(a.seed), &settings, &inputs, &[&a.out], json!({ "final_loss": loss }))
}

fn fit_gmm_cmd(a: FitGmmArgs, argv: &[String]) -> Outcome {
    let em = EmConfig { max_iters: a.max_iters, seed: a.seed, ..EmConfig::default() };
    let patches = load_patches(&a.images, a.patch_size, a.stride)?;
    let fit = gmm_fit(patches.view(), a.components, &em).within("priors")?;
    let ll = fit.log_likelihood.last().copied().unwrap_or(f64::NAN);
    save_checkpoint(&Model::Gmm(fit.gmm), &a.out).within("io")?;
    println!("fitted {} components on {} patches, mean log-likelihood {ll:.4}", a.components, patches.nrows());
    let settings = json!({ "em": em, "components": a.components, "patch_size": a.patch_size, "stride": a.stride });
    let inputs: Vec<&Path> = a.images.iter().map(PathBuf::as_path).collect();
    let metrics = json!({ "log_likelihood": ll, "reinitialized": fit.reinitialized });
    write_manifest(argv, Some(a.seed), &settings, &inputs, &[&a.out], metrics)
}

fn degrade_cmd(a: DegradeArgs, argv: &[String]) -> Outcome {
    let cfg = experiment(&a.task, a.seed)?;
    let src = &a.source;
    let truth = match (&src.input, src.make_texture, src.make_phantom) {
        (Some(path), _, _) => read_image(path).within("io")?,
        (None, Some(n), _) => texture(n, n, a.seed),
        (None, None, Some(n)) => shepp_logan(n),
        _ => return Err(usage_error("cli", "one of --in, --make-texture, --make-phantom is required")),
    };
    let op = cfg.operator.build(truth.dim()).usage("operators")?;
    let y = simulate_observation(op.as_ref(), &truth, cfg.noise, a.seed).within("operators")?;
    write_image(&y, &a.out).within("io")?;
    let mut outputs = vec![a.out.as_path()];
    if src.input.is_none() {
        let Some(path) = &a.truth_out else {
            return Err(usage_error("cli", "--truth-out is required with a generated ground truth"));
        };
        write_image(&truth, path).within("io")?;
        outputs.push(path);
    }
    println!("observation {:?} written to {}", y.dim(), a.out.display());
    let inputs: Vec<&Path> = src.input.iter().map(PathBuf::as_path).collect();
    write_manifest(argv, Some(a.seed), &cfg, &inputs, &outputs, json!({}))
}

fn reconstruct_cmd(a: ReconstructArgs, argv: &[String]) -> Outcome {
    let mut cfg = experiment(&a.task, a.seed)?;
    if let Some(p) = a.prior {
        cfg.prior.kind = match p {
            PriorArg::None => PriorKind::None,
            PriorArg::Patchnr => PriorKind::Patchnr,
            PriorArg::Cpatchnr => PriorKind::Cpatchnr,
            PriorArg::Epll => PriorKind::Epll,
        };
    }
    if a.checkpoint.is_some() {
        cfg.prior.checkpoint = a.checkpoint.clone();
    }
    let s = &mut cfg.solver;
    s.iterations = a.iterations.unwrap_or(s.iterations);
    s.lambda = a.lambda.unwrap_or(s.lambda);
    s.learning_rate = a.lr.unwrap_or(s.learning_rate);
    s.subset_size = a.subset.unwrap_or(s.subset_size);
    s.clamp_unit |= a.clamp;
    if let Some(init) = a.init {
        s.init = match init {
            InitArg::Zeros => Initialization::Zeros,
            InitArg::Naive => Initialization::Naive,
        };
    }
    let model = match (cfg.prior.kind, &cfg.prior.checkpoint) {
        (PriorKind::None, _) => None,
        (_, None) => return Err(usage_error("cli", "a checkpoint is required for this prior")),
        (_, Some(path)) => Some(load_checkpoint(path).within("io")?),
    };
    if let Some(m) = &model {
        let dim = match m {
            Model::Flow(f) => f.dim(),
            Model::CFlow(f) => f.dim(),
            Model::Gmm(g) => g.dim(),
        };
        cfg.prior.patch_size = patch_side(dim)?;
    }
    cfg.validate().usage("config")?;

    let y = read_image(&a.obs).within("io")?;
    let shape = cfg.operator.input_shape(y.dim(), a.size).usage("operators")?;
    let op = cfg.operator.build(shape).usage("operators")?;
    let geom = PatchGeometry::square(shape, cfg.prior.patch_size).usage("patchops")?;
    let mut rc = cfg.reconstruct_config();
    rc.progress = a.progress;
    if cfg.prior.kind == PriorKind::None {
        rc.subset = SubsetPolicy::Full;
    }
    let cond_image = op.naive_inverse(&y).within("operators")?;
    let prior: Option<Box<dyn PatchPrior + '_>> = match (cfg.prior.kind, &model) {
        (PriorKind::None, _) => None,
        (PriorKind::Patchnr, Some(Model::Flow(f))) => Some(Box::new(PatchNr::new(f, geom).usage("priors")?)),
        (PriorKind::Cpatchnr, Some(Model::CFlow(f))) => Some(Box::new(CPatchNr::new(f, &cond_image, geom).usage("priors")?)),
        (PriorKind::Epll, Some(Model::Gmm(g))) => Some(Box::new(Epll::new(g, geom).usage("priors")?)),
        (kind, Some(m)) => {
            return Err(usage_error("priors", format!("{kind:?} prior cannot use a {} checkpoint", m.kind())));
        }
        (_, None) => unreachable!("checked above"),
    };
    let result = reconstruct(&y, op.as_ref(), &cfg.fidelity, prior.as_deref(), &rc).within("solver")?;
    write_image(&result.image, &a.out).within("io")?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(path) = &a.trace {
        let mut csv = String::from("iter,fidelity,prior,objective\n");
        for t in &result.trace {
            let _ = writeln!(csv, "{},{},{},{}", t.iter, t.fidelity, t.prior, t.objective);
        }
        std::fs::write(path, csv).within("io")?;
        outputs.push(path);
    }
    let mut inputs = vec![a.obs.as_path()];
    inputs.extend(cfg.prior.checkpoint.as_deref());
    let mut metrics = json!({ "final_objective": result.trace.last().map(|t| t.objective) });
    if let Some(truth_path) = &a.truth {
        let truth = read_image(truth_path).within("io")?;
        let m = evaluate(&result.image, &truth, a.crop, a.range.into()).within("metrics")?;
        println!("psnr {:.4} ssim {:.4} blur_effect {:.4}", m.psnr, m.ssim, m.blur_effect);
        metrics["evaluation"] = serde_json::to_value(m).unwrap_or(Value::Null);
        inputs.push(truth_path);
    }
    metrics["diagnostic"] = json!(result.diagnostic);
    write_manifest(argv, Some(a.seed), &cfg, &inputs, &outputs, metrics)?;
    match result.diagnostic {
        Some(d) => Err(Failure { module: "solver", usage: false, error: Error::NonFinite(d) }),
        None => {
            println!("reconstruction written to {}", a.out.display());
            Ok(())
        }
    }
}

fn fbp_cmd(a: FbpArgs, argv: &[String]) -> Outcome {
    let cfg = experiment(&a.task, 0)?;
    let OperatorConfig::Radon { extent, bins, angles, cut } = cfg.operator else {
        return Err(usage_error("operators", "fbp needs a radon operator"));
    };
    let mut geom = RadonGeometry::parallel(a.size, extent, bins, angles).usage("operators")?;
    if cut > 0 {
        geom = geom.limited(cut).usage("operators")?;
    }
    let sino = read_image(&a.sino).within("io")?;
    let filter = match a.filter {
        FilterArg::RamLak => FbpFilter::RamLak,
        FilterArg::Hann => FbpFilter::Hann,
    };
    let x = fbp(&geom, &sino, filter, a.scaling).within("operators")?;
    write_image(&x, &a.out).within("io")?;
    println!("fbp written to {}", a.out.display());
    let settings = json!({ "geometry": geom, "filter": filter, "frequency_scaling": a.scaling });
    write_manifest(argv, None, &settings, &[&a.sino], &[&a.out], json!({}))
}

fn evaluate_cmd(a: EvaluateArgs) -> Outcome {
    let truth = read_image(&a.truth).within("io")?;
    let mut csv = String::from("image,psnr,ssim,blur_effect\n");
    for path in &a.images {
        let x: Image = read_image(path).within("io")?;
        let m = evaluate(&x, &truth, a.crop, a.range.into()).within("metrics")?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(csv, "{id},{:.6},{:.6},{:.6}", m.psnr, m.ssim, m.blur_effect);
    }
    print!("{csv}");
    if let Some(out) = &a.out {
        std::fs::write(out, &csv).within("io")?;
    }
    Ok(())
}

fn score_cmd(a: ScoreArgs, argv: &[String]) -> Outcome {
    let Model::Flow(flow) = load_checkpoint(&a.checkpoint).within("io")? else {
        return Err(usage_error("io", "score-patches needs an unconditional flow checkpoint"));
    };
    let p = patch_side(flow.dim())?;
    let clean = load_patches(&a.images, p, a.stride)?;
    let hist = nll_histogram(&flow, clean.view(), a.bins).within("metrics")?;
    println!("clean: {} patches, mean nll {:.4}", hist.values.len(), hist.mean);
    let mut report = json!({ "clean": hist });
    if !a.compare.is_empty() {
        let other = load_patches(&a.compare, p, a.stride)?;
        let h2 = nll_histogram(&flow, other.view(), a.bins).within("metrics")?;
        let (diff, t) = separation(&hist.values, &h2.values).within("metrics")?;
        println!("compare: {} patches, mean nll {:.4}; difference {diff:.4}, t = {t:.2}", h2.values.len(), h2.mean);
        report["compare"] = json!(h2);
        report["mean_difference"] = json!(diff);
        report["t_statistic"] = json!(t);
    }
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string())).within("io")?;
        std::fs::write(out, text).within("io")?;
        let mut inputs: Vec<&Path> = vec![a.checkpoint.as_path()];
        inputs.extend(a.images.iter().chain(&a.compare).map(PathBuf::as_path));
        let settings = json!({ "bins": a.bins, "stride": a.stride });
        let metrics = json!({ "mean_difference": report.get("mean_difference"), "t_statistic": report.get("t_statistic") });
        write_manifest(argv, None, &settings, &inputs, &[out], metrics)?;
    }
    Ok(())
}

fn analysis_cmd(a: AnalysisArgs, argv: &[String]) -> Outcome {
    let rows = validation_suite(a.scale_down, a.seed).within("analysis")?;
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!("{:width$}  {:>12}  {:<28}  result", "check", "value", "bound");
    for r in &rows {
        println!("{:width$}  {:>12.4e}  {:<28}  {}", r.name, r.value, r.bound, if r.pass { "PASS" } else { "FAIL" });
    }
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::Config(e.to_string())).within("io")?;
        std::fs::write(out, text).within("io")?;
        write_manifest(argv, Some(a.seed), &json!({ "scale_down": a.scale_down }), &[], &[out], json!(rows))?;
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure { module: "analysis", usage: false, error: Error::Numerical(format!("{failed} checks failed")) });
    }
    Ok(())
}

fn presets_cmd(a: PresetArgs) -> Outcome {
    if let Some(name) = &a.name {
        let text = Preset::get(name).usage("config")?.to_config(0).to_toml().within("config")?;
        print!("{text}");
        return Ok(());
    }
    println!("{:<11} {:>7} {:>9} {:>6} {:>7}  noise", "name", "lambda", "patches", "iters", "lr");
    for p in Preset::all() {
        let noise = match p.noise {
            crate::operators::NoiseModel::Gaussian { sigma } => format!("gaussian sigma={sigma:.4}"),
            crate::operators::NoiseModel::PoissonCt { n0 } => format!("poisson n0={n0}"),
        };
        println!("{:<11} {:>7} {:>9} {:>6} {:>7}  {noise}", p.name, p.lambda, p.subset_size, p.iterations, p.learning_rate);
    }
    Ok(())
}
