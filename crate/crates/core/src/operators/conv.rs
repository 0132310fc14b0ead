use ndarray::Array2;

use super::{check_shape, LinearOperator};
use crate::diffcore::ops;
use crate::error::{Error, Result};
use crate::Image;

/// Same-size convolution with zero padding; the adjoint is correlation with
/// the same kernel.
#[derive(Debug, Clone)]
pub struct Convolution {
    kernel: Array2<f64>,
    shape: (usize, usize),
}

impl Convolution {
    pub fn new(kernel: Array2<f64>, shape: (usize, usize)) -> Result<Self> {
        if kernel.is_empty() || !kernel.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("convolution kernel must be non-empty and finite".into()));
        }
        if shape.0 < kernel.nrows() || shape.1 < kernel.ncols() {
            return Err(Error::InvalidArgument(format!(
                "image {shape:?} smaller than the {:?} kernel",
                kernel.dim()
            )));
        }
        Ok(Self { kernel, shape })
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }
}

impl LinearOperator for Convolution {
    fn input_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn output_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn apply(&self, image: &Image) -> Result<Array2<f64>> {
        check_shape("convolution input", self.shape, image.dim())?;
        Ok(ops::conv2d_same(image.view(), self.kernel.view()))
    }

    fn adjoint(&self, observation: &Array2<f64>) -> Result<Image> {
        check_shape("convolution adjoint input", self.shape, observation.dim())?;
        Ok(ops::conv2d_same_backward(observation.view(), self.kernel.view()))
    }

    /// The blurred observation itself.
    fn naive_inverse(&self, observation: &Array2<f64>) -> Result<Image> {
        check_shape("convolution observation", self.shape, observation.dim())?;
        Ok(observation.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::test_util::adjoint_gap;
    use crate::synth::motion_blur_kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_kernel_is_identity() {
        let mut k = Array2::zeros((5, 5));
        k[[2, 2]] = 1.0;
        let op = Convolution::new(k, (9, 11)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Image::from_shape_fn((9, 11), |_| rng.random_range(0.0..1.0));
        assert_eq!(op.apply(&x).unwrap(), x);
    }

    #[test]
    fn normalized_kernel_keeps_interior_constant() {
        let k = motion_blur_kernel(9, 0.7, 1);
        let op = Convolution::new(k, (20, 20)).unwrap();
        let y = op.apply(&Image::from_elem((20, 20), 0.5)).unwrap();
        for i in 4..16 {
            for j in 4..16 {
                assert!((y[[i, j]] - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let k = motion_blur_kernel(7, 0.3, 2);
        let op = Convolution::new(k, (16, 13)).unwrap();
        assert!(adjoint_gap(&op, 50, 3) < 1e-10);
    }
}
