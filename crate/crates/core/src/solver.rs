//! Variational reconstruction `min_x D(f(x), y) + lambda R(x)` with Adam.

use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::fidelity::Fidelity;
use crate::operators::LinearOperator;
use crate::patchops::sample_patch_indices;
use crate::priors::PatchPrior;
use crate::Image;

/// Which patches the prior sees at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetPolicy {
    /// `n` indices drawn uniformly with replacement, fresh every iteration.
    Random(usize),
    /// Every patch exactly once.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    Zeros,
    /// The operator's classical reconstruction of `y`.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// User weight; the prior enters as `lambda * weight_scale * R`.
    pub lambda: f64,
    pub subset: SubsetPolicy,
    pub seed: u64,
    pub init: Initialization,
    /// Clamp the final iterate to `[0, 1]`.
    #[serde(default)]
    pub clamp_unit: bool,
    /// Write `iter,fidelity,prior,objective` lines to stderr.
    #[serde(default)]
    pub progress: bool,
}

impl ReconstructConfig {
    pub fn new(iterations: usize, learning_rate: f64, lambda: f64, subset: SubsetPolicy, seed: u64) -> Self {
        Self {
            iterations,
            learning_rate,
            lambda,
            subset,
            seed,
            init: Initialization::Naive,
            clamp_unit: false,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument("regularization weight must be non-negative".into()));
        }
        if self.subset == SubsetPolicy::Random(0) {
            return Err(Error::InvalidArgument("patch subset must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub fidelity: f64,
    /// Weighted prior term on the sampled subset.
    pub prior: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub image: Image,
    pub trace: Vec<TraceEntry>,
    /// Set when the run stopped early on a non-finite objective.
    pub diagnostic: Option<String>,
}

/// Starting point for `reconstruct` under `policy`.
pub fn initial_image(policy: Initialization, op: &dyn LinearOperator, y: &Array2<f64>) -> Result<Image> {
    match policy {
        Initialization::Zeros => Ok(Image::zeros(op.input_shape())),
        Initialization::Naive => op.naive_inverse(y),
    }
}

/// Adam on the pixels of `x` starting from `config.init`.
///
/// Each iteration evaluates the exact fidelity and the prior on a patch
/// subset, logs the objective at the current iterate and takes one step.
pub fn reconstruct(
    y: &Array2<f64>,
    op: &dyn LinearOperator,
    fidelity: &Fidelity,
    prior: Option<&dyn PatchPrior>,
    config: &ReconstructConfig,
) -> Result<Reconstruction> {
    let init = initial_image(config.init, op, y)?;
    reconstruct_from(y, op, fidelity, prior, init, config)
}

/// As [`reconstruct`] from an explicit starting image.
pub fn reconstruct_from(
    y: &Array2<f64>,
    op: &dyn LinearOperator,
    fidelity: &Fidelity,
    prior: Option<&dyn PatchPrior>,
    init: Image,
    config: &ReconstructConfig,
) -> Result<Reconstruction> {
    config.validate()?;
    if y.dim() != op.output_shape() {
        return Err(Error::shape("observation", format!("{:?}", op.output_shape()), format!("{:?}", y.dim())));
    }
    if init.dim() != op.input_shape() {
        return Err(Error::shape("initial image", format!("{:?}", op.input_shape()), format!("{:?}", init.dim())));
    }
    if let Some(p) = prior {
        let g = p.geometry();
        if (g.rows, g.cols) != op.input_shape() {
            return Err(Error::shape(
                "prior geometry",
                format!("{:?}", op.input_shape()),
                format!("({}, {})", g.rows, g.cols),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), &[init.len()]);
    let mut x = init.as_standard_layout().to_owned();
    let mut trace = Vec::with_capacity(config.iterations);
    let mut diagnostic = None;
    let full = prior.map(|p| p.geometry().all_indices());
    let stderr = std::io::stderr();

    for iter in 0..config.iterations {
        let fx = op.apply(&x)?;
        let (fid, gfx) = match fidelity.evaluate(&fx, y) {
            Ok(v) => v,
            Err(Error::NonFinite(msg)) => {
                diagnostic = Some(format!("iteration {iter}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let mut grad = op.adjoint(&gfx)?;
        let mut prior_term = 0.0;
        if let (Some(p), true) = (prior, config.lambda > 0.0) {
            let subset = match config.subset {
                SubsetPolicy::Random(n) => sample_patch_indices(p.geometry(), n, &mut rng),
                SubsetPolicy::Full => full.clone().expect("prior present"),
            };
            let weight = config.lambda * p.weight_scale(subset.len());
            match p.evaluate(&x, &subset) {
                Ok(eval) => {
                    prior_term = weight * eval.value;
                    grad.scaled_add(weight, &eval.gradient);
                }
                Err(Error::NonFinite(msg)) => {
                    diagnostic = Some(format!("iteration {iter}: {msg}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let objective = fid + prior_term;
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            diagnostic = Some(format!("iteration {iter}: non-finite objective {objective}"));
            break;
        }
        let entry = TraceEntry { iter, fidelity: fid, prior: prior_term, objective };
        if config.progress {
            let _ = writeln!(stderr.lock(), "{iter},{fid},{prior_term},{objective}");
        }
        trace.push(entry);

        let g = grad.as_standard_layout();
        let xs = x.as_slice_mut().expect("standard layout");
        adam.update(&mut [xs], &[g.as_slice().expect("standard layout")])?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("iterate diverged at iteration {iter}")));
        }
    }
    if config.clamp_unit {
        x.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok(Reconstruction { image: x, trace, diagnostic })
}
