use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `y = f(x) + sigma * eps`
    Gaussian { sigma: f64 },
    /// Photon counts `N ~ Pois(n0 * exp(-f(x)))`, observed as `-ln(max(N, 1) / n0)`.
    PoissonCt { n0: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidArgument(format!("noise level {sigma} must be non-negative")))
            }
            NoiseModel::PoissonCt { n0 } if !(n0 > 0.0 && n0.is_finite()) => {
                Err(Error::InvalidArgument(format!("photon count {n0} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Corrupts a clean observation in place of the detector.
pub fn add_noise(clean: &Array2<f64>, model: NoiseModel, seed: u64) -> Result<Array2<f64>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        NoiseModel::Gaussian { sigma } => {
            if sigma == 0.0 {
                return Ok(clean.clone());
            }
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            Ok(clean.mapv(|v| v + normal.sample(&mut rng)))
        }
        NoiseModel::PoissonCt { n0 } => {
            let mut out = Array2::zeros(clean.dim());
            for (idx, &v) in clean.indexed_iter() {
                let rate = n0 * (-v).exp();
                if !rate.is_finite() {
                    return Err(Error::NonFinite(format!("photon rate at {idx:?} for value {v}")));
                }
                let count = if rate > 0.0 {
                    Poisson::new(rate).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                };
                out[idx] = -(count.max(1.0) / n0).ln();
            }
            Ok(out)
        }
    }
}

/// `y = noise(f(x))`
pub fn simulate_observation(op: &dyn LinearOperator, image: &Image, model: NoiseModel, seed: u64) -> Result<Array2<f64>> {
    add_noise(&op.apply(image)?, model, seed)
}
