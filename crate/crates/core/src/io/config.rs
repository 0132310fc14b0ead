//! TOML experiment configuration and the built-in task presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::Fidelity;
use crate::flow::TrainConfig;
use crate::io::image::read_pfm;
use crate::operators::{BlurDownsample, Convolution, LinearOperator, NoiseModel, Radon, RadonGeometry};
use crate::solver::{Initialization, ReconstructConfig, SubsetPolicy};
use crate::synth::motion_blur_kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sr,
    CtFull,
    CtLimited,
    Deblur,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sr => "sr",
            Task::CtFull => "ct_full",
            Task::CtLimited => "ct_limited",
            Task::Deblur => "deblur",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Task::Sr),
            "ct_full" | "ct-full" => Ok(Task::CtFull),
            "ct_limited" | "ct-limited" => Ok(Task::CtLimited),
            "deblur" => Ok(Task::Deblur),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    /// Gaussian blur followed by subsampling.
    BlurDownsample { kernel_size: usize, sigma: f64, stride: usize },
    /// Parallel-beam Radon transform on a square image of physical side
    /// `extent`; `cut` angles are removed from each end.
    Radon { extent: f64, bins: usize, angles: usize, #[serde(default)] cut: usize },
    /// Same-size convolution with a kernel from a PFM file or, without a
    /// file, a synthetic motion kernel.
    Convolution {
        #[serde(default)]
        kernel_file: Option<PathBuf>,
        #[serde(default = "default_kernel_size")]
        size: usize,
        #[serde(default)]
        angle: f64,
        #[serde(default)]
        kernel_seed: u64,
    },
}

fn default_kernel_size() -> usize {
    13
}

impl OperatorConfig {
    /// Image extents that map to an observation of `observed` extents.
    /// Radon observations do not determine the image, so `size` is needed.
    pub fn input_shape(&self, observed: (usize, usize), size: Option<usize>) -> Result<(usize, usize)> {
        match (self, size) {
            (_, Some(n)) => Ok((n, n)),
            (OperatorConfig::BlurDownsample { stride, .. }, None) => Ok((observed.0 * stride, observed.1 * stride)),
            (OperatorConfig::Convolution { .. }, None) => Ok(observed),
            (OperatorConfig::Radon { .. }, None) => Err(Error::Config("radon observations need the image size".into())),
        }
    }

    /// Operator acting on images of `shape`.
    pub fn build(&self, shape: (usize, usize)) -> Result<Box<dyn LinearOperator>> {
        Ok(match self {
            OperatorConfig::BlurDownsample { kernel_size, sigma, stride } => Box::new(BlurDownsample::new(
                crate::operators::gaussian_kernel(*kernel_size, *sigma),
                *stride,
                shape,
            )?),
            OperatorConfig::Radon { extent, bins, angles, cut } => {
                if shape.0 != shape.1 {
                    return Err(Error::Config(format!("radon needs a square image, got {shape:?}")));
                }
                let mut geom = RadonGeometry::parallel(shape.0, *extent, *bins, *angles)?;
                if *cut > 0 {
                    geom = geom.limited(*cut)?;
                }
                Box::new(Radon::new(geom)?)
            }
            OperatorConfig::Convolution { kernel_file, size, angle, kernel_seed } => {
                let kernel = match kernel_file {
                    Some(path) => read_pfm(path)?,
                    None => motion_blur_kernel(*size, *angle, *kernel_seed),
                };
                Box::new(Convolution::new(kernel, shape)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    None,
    Patchnr,
    Cpatchnr,
    Epll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub patch_size: usize,
    /// Flow or GMM checkpoint.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    /// Patches per iteration; 0 means every patch.
    pub subset_size: usize,
    #[serde(default = "default_init")]
    pub init: Initialization,
    #[serde(default)]
    pub clamp_unit: bool,
}

fn default_init() -> Initialization {
    Initialization::Naive
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub observation: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub operator: OperatorConfig,
    pub noise: NoiseModel,
    pub fidelity: Fidelity,
    pub prior: PriorConfig,
    pub solver: SolverSettings,
    pub training: TrainConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.reconstruct_config().validate()?;
        if self.prior.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        Ok(())
    }

    pub fn reconstruct_config(&self) -> ReconstructConfig {
        let s = &self.solver;
        let subset = if s.subset_size == 0 { SubsetPolicy::Full } else { SubsetPolicy::Random(s.subset_size) };
        let mut cfg = ReconstructConfig::new(s.iterations, s.learning_rate, s.lambda, subset, self.seed);
        cfg.init = s.init;
        cfg.clamp_unit = s.clamp_unit;
        cfg
    }
}

/// Named hyperparameter profile for one task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub task: Task,
    pub lambda: f64,
    pub subset_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub noise: NoiseModel,
    pub fidelity: Fidelity,
    pub operator: OperatorConfig,
}

impl Preset {
    /// Full-scale profiles: 6x6 patches, flows trained for 700k steps.
    pub fn all() -> Vec<Preset> {
        let radon = |cut| OperatorConfig::Radon { extent: 0.26, bins: 513, angles: 1000, cut };
        vec![
            Preset {
                name: "sr",
                task: Task::Sr,
                lambda: 0.15,
                subset_size: 130_000,
                iterations: 500,
                learning_rate: 0.03,
                noise: NoiseModel::Gaussian { sigma: 0.01 },
                fidelity: Fidelity::gaussian(),
                operator: OperatorConfig::BlurDownsample { kernel_size: 16, sigma: 2.0, stride: 4 },
            },
            Preset {
                name: "ct_full",
                task: Task::CtFull,
                lambda: 700.0,
                subset_size: 40_000,
                iterations: 300,
                learning_rate: 0.005,
                noise: NoiseModel::PoissonCt { n0: 4096.0 },
                fidelity: Fidelity::poisson_ct(4096.0),
                operator: radon(0),
            },
            Preset {
                name: "ct_limited",
                task: Task::CtLimited,
                lambda: 700.0,
                subset_size: 40_000,
                iterations: 3000,
                learning_rate: 0.005,
                noise: NoiseModel::PoissonCt { n0: 4096.0 },
                fidelity: Fidelity::poisson_ct(4096.0),
                operator: radon(100),
            },
            Preset {
                name: "deblur",
                task: Task::Deblur,
                lambda: 0.87,
                subset_size: 40_000,
                iterations: 600,
                learning_rate: 0.005,
                noise: NoiseModel::Gaussian { sigma: 5.0 / 255.0 },
                fidelity: Fidelity::gaussian(),
                operator: OperatorConfig::Convolution { kernel_file: None, size: 13, angle: 0.0, kernel_seed: 0 },
            },
        ]
    }

    pub fn get(name: &str) -> Result<Preset> {
        let key = name.replace('-', "_");
        Self::all()
            .into_iter()
            .find(|p| p.name == key)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))
    }

    pub fn to_config(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            task: self.task,
            seed,
            operator: self.operator.clone(),
            noise: self.noise,
            fidelity: self.fidelity,
            prior: PriorConfig { kind: PriorKind::Patchnr, patch_size: 6, checkpoint: None },
            solver: SolverSettings {
                iterations: self.iterations,
                learning_rate: self.learning_rate,
                lambda: self.lambda,
                subset_size: self.subset_size,
                init: Initialization::Naive,
                clamp_unit: false,
            },
            training: TrainConfig::full_scale(),
            paths: Paths::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_settings() {
        let p = Preset::get("sr").unwrap();
        assert_eq!((p.lambda, p.subset_size, p.iterations, p.learning_rate), (0.15, 130_000, 500, 0.03));
        let p = Preset::get("ct_full").unwrap();
        assert_eq!((p.lambda, p.subset_size, p.iterations, p.learning_rate), (700.0, 40_000, 300, 0.005));
        let p = Preset::get("ct-limited").unwrap();
        assert_eq!((p.lambda, p.subset_size, p.iterations, p.learning_rate), (700.0, 40_000, 3000, 0.005));
        let p = Preset::get("deblur").unwrap();
        assert_eq!((p.lambda, p.subset_size, p.iterations, p.learning_rate), (0.87, 40_000, 600, 0.005));
        assert!(Preset::get("denoise").is_err());
    }

    #[test]
    fn toml_round_trip() {
        for p in Preset::all() {
            let cfg = p.to_config(7);
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = Preset::get("sr").unwrap().to_config(1).to_toml().unwrap();
        let bad = text.replace("[solver]\n", "[solver]\nmomentum = 0.9\n");
        assert_ne!(bad, text);
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = format!("colour = 1\n{text}");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn operators_build() {
        let op = OperatorConfig::BlurDownsample { kernel_size: 16, sigma: 2.0, stride: 4 }.build((32, 32)).unwrap();
        assert_eq!(op.output_shape(), (8, 8));
        let op = OperatorConfig::Radon { extent: 1.0, bins: 23, angles: 30, cut: 3 }.build((16, 16)).unwrap();
        assert_eq!(op.output_shape(), (24, 23));
        let op = OperatorConfig::Convolution { kernel_file: None, size: 5, angle: 0.3, kernel_seed: 1 }.build((10, 12)).unwrap();
        assert_eq!(op.output_shape(), (10, 12));
    }

    #[test]
    fn input_shape_inference() {
        let sr = OperatorConfig::BlurDownsample { kernel_size: 16, sigma: 2.0, stride: 4 };
        assert_eq!(sr.input_shape((8, 6), None).unwrap(), (32, 24));
        let ct = OperatorConfig::Radon { extent: 1.0, bins: 23, angles: 30, cut: 0 };
        assert!(ct.input_shape((30, 23), None).is_err());
        assert_eq!(ct.input_shape((30, 23), Some(16)).unwrap(), (16, 16));
    }
}
