//! Linear forward operators `f` with exact adjoints, filtered
//! backprojection, bicubic upsampling and noise simulation.

mod conv;
mod noise;
mod radon;
mod sr;

pub use conv::Convolution;
pub use noise::{add_noise, simulate_observation, NoiseModel};
pub use radon::{fbp, FbpFilter, Radon, RadonGeometry, Sinogram, DEFAULT_FREQUENCY_SCALING};
pub use sr::{bicubic_upsample, gaussian_kernel, BlurDownsample};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Image;

/// A linear map between 2-D grids together with its adjoint.
pub trait LinearOperator {
    fn input_shape(&self) -> (usize, usize);

    fn output_shape(&self) -> (usize, usize);

    fn apply(&self, image: &Image) -> Result<Array2<f64>>;

    fn adjoint(&self, observation: &Array2<f64>) -> Result<Image>;

    /// Classical reconstruction used for initialization and conditioning.
    fn naive_inverse(&self, observation: &Array2<f64>) -> Result<Image>;
}

pub(crate) fn check_shape(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::shape(
            context,
            format!("{}x{}", expected.0, expected.1),
            format!("{}x{}", found.0, found.1),
        ));
    }
    Ok(())
}

/// `f(x) = x`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Identity {
    pub shape: (usize, usize),
}

impl Identity {
    pub fn new(shape: (usize, usize)) -> Self {
        Self { shape }
    }
}

impl LinearOperator for Identity {
    fn input_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn output_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn apply(&self, image: &Image) -> Result<Array2<f64>> {
        check_shape("identity input", self.shape, image.dim())?;
        Ok(image.clone())
    }

    fn adjoint(&self, observation: &Array2<f64>) -> Result<Image> {
        check_shape("identity adjoint input", self.shape, observation.dim())?;
        Ok(observation.clone())
    }

    fn naive_inverse(&self, observation: &Array2<f64>) -> Result<Image> {
        self.adjoint(observation)
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Worst relative gap `|<Ax, y> - <x, A^T y>| / max(|<Ax,y>|, eps)` over random pairs.
    pub fn adjoint_gap(op: &dyn LinearOperator, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let x = Image::from_shape_fn(op.input_shape(), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn(op.output_shape(), |_| rng.random_range(-1.0..1.0));
            let lhs = (&op.apply(&x).unwrap() * &y).sum();
            let rhs = (&x * &op.adjoint(&y).unwrap()).sum();
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1e-12));
        }
        worst
    }
}
