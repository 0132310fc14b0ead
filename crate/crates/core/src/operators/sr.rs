use ndarray::Array2;

use super::{check_shape, LinearOperator};
use crate::error::{Error, Result};
use crate::Image;

/// Normalized `size x size` Gaussian kernel centered between the middle taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Array2<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = Array2::from_shape_fn((size, size), |(u, v)| {
        let (du, dv) = (u as f64 - c, v as f64 - c);
        (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp()
    });
    let total = k.sum();
    k /= total;
    k
}

/// Gaussian blur followed by subsampling with zero padding.
///
/// Low-resolution pixel `(i, j)` covers the high-resolution block starting
/// at `(stride*i, stride*j)`; the kernel is centered on that block.
#[derive(Debug, Clone)]
pub struct BlurDownsample {
    kernel: Array2<f64>,
    stride: usize,
    input: (usize, usize),
}

impl BlurDownsample {
    pub fn new(kernel: Array2<f64>, stride: usize, input: (usize, usize)) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if input.0 < kernel.nrows() || input.1 < kernel.ncols() {
            return Err(Error::InvalidArgument(format!(
                "image {input:?} smaller than the {:?} kernel",
                kernel.dim()
            )));
        }
        Ok(Self { kernel, stride, input })
    }

    /// 16x16 Gaussian (sigma 2) with stride 4.
    pub fn standard(input: (usize, usize)) -> Result<Self> {
        Self::new(gaussian_kernel(16, 2.0), 4, input)
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    fn offsets(&self) -> (isize, isize) {
        let (kh, kw) = self.kernel.dim();
        (
            (kh as isize - self.stride as isize) / 2,
            (kw as isize - self.stride as isize) / 2,
        )
    }

    /// Visits every (output pixel, input pixel, weight) triple inside the image.
    fn for_each_tap(&self, mut visit: impl FnMut((usize, usize), (usize, usize), f64)) {
        let (oh, ow) = self.output_shape();
        let (kh, kw) = self.kernel.dim();
        let (ah, aw) = self.offsets();
        let (h, w) = (self.input.0 as isize, self.input.1 as isize);
        for i in 0..oh {
            for j in 0..ow {
                let (bi, bj) = ((self.stride * i) as isize - ah, (self.stride * j) as isize - aw);
                for u in 0..kh {
                    let r = bi + u as isize;
                    if r < 0 || r >= h {
                        continue;
                    }
                    for v in 0..kw {
                        let c = bj + v as isize;
                        if c < 0 || c >= w {
                            continue;
                        }
                        visit((i, j), (r as usize, c as usize), self.kernel[[u, v]]);
                    }
                }
            }
        }
    }
}

impl LinearOperator for BlurDownsample {
    fn input_shape(&self) -> (usize, usize) {
        self.input
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.input.0.div_ceil(self.stride), self.input.1.div_ceil(self.stride))
    }

    fn apply(&self, image: &Image) -> Result<Array2<f64>> {
        check_shape("blur-downsample input", self.input, image.dim())?;
        let mut out = Array2::zeros(self.output_shape());
        self.for_each_tap(|o, x, k| out[o] += k * image[x]);
        Ok(out)
    }

    fn adjoint(&self, observation: &Array2<f64>) -> Result<Image> {
        check_shape("blur-downsample adjoint input", self.output_shape(), observation.dim())?;
        let mut out = Image::zeros(self.input);
        self.for_each_tap(|o, x, k| out[x] += k * observation[o]);
        Ok(out)
    }

    /// Bicubic upsampling by the stride.
    fn naive_inverse(&self, observation: &Array2<f64>) -> Result<Image> {
        check_shape("blur-downsample observation", self.output_shape(), observation.dim())?;
        Ok(bicubic_upsample(observation, self.stride, self.input))
    }
}

fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Keys bicubic interpolation (a = -0.5) by an integer factor with
/// replicated borders, aligned so that low-resolution pixel `i` sits at the
/// center of high-resolution block `factor*i .. factor*(i+1)`.
pub fn bicubic_upsample(image: &Image, factor: usize, out_shape: (usize, usize)) -> Image {
    let (h, w) = image.dim();
    let f = factor as f64;
    let taps = |n: usize, len: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..n)
            .map(|u| {
                let src = (u as f64 + 0.5) / f - 0.5;
                let base = src.floor();
                let frac = src - base;
                let mut idx = [0usize; 4];
                let mut wts = [0.0; 4];
                for k in 0..4 {
                    let pos = base as isize - 1 + k as isize;
                    idx[k] = pos.clamp(0, len as isize - 1) as usize;
                    wts[k] = cubic_weight(frac - (k as f64 - 1.0));
                }
                (idx, wts)
            })
            .collect()
    };
    let rows = taps(out_shape.0, h);
    let cols = taps(out_shape.1, w);
    Image::from_shape_fn(out_shape, |(r, c)| {
        let (ri, rw) = rows[r];
        let (ci, cw) = cols[c];
        let mut acc = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                acc += rw[a] * cw[b] * image[[ri[a], ci[b]]];
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::test_util::adjoint_gap;

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(16, 2.0);
        assert!((k.sum() - 1.0).abs() < 1e-12);
        assert_eq!(k[[0, 0]], k[[15, 15]]);
    }

    #[test]
    fn output_geometry() {
        let op = BlurDownsample::standard((600, 600)).unwrap();
        assert_eq!(op.output_shape(), (150, 150));
        let op = BlurDownsample::standard((97, 98)).unwrap();
        assert_eq!(op.output_shape(), (25, 25));
        assert!(BlurDownsample::standard((10, 40)).is_err());
    }

    #[test]
    fn constant_image() {
        let op = BlurDownsample::standard((64, 64)).unwrap();
        let y = op.apply(&Image::from_elem((64, 64), 0.8)).unwrap();
        // interior blocks see the whole kernel
        for i in 2..14 {
            for j in 2..14 {
                assert!((y[[i, j]] - 0.8).abs() < 1e-12);
            }
        }
        assert!(y[[0, 0]] < 0.8);
    }

    #[test]
    fn adjoint_identity() {
        let op = BlurDownsample::standard((40, 36)).unwrap();
        assert!(adjoint_gap(&op, 50, 1) < 1e-10);
    }

    #[test]
    fn bicubic_preserves_constants_and_linear_ramps() {
        let c = bicubic_upsample(&Image::from_elem((5, 6), 0.4), 4, (20, 24));
        assert!(c.iter().all(|v| (v - 0.4).abs() < 1e-12));
        let ramp = Image::from_shape_fn((8, 8), |(_, j)| j as f64);
        let up = bicubic_upsample(&ramp, 4, (32, 32));
        // away from borders, cubic convolution reproduces linear functions
        for u in 8..24 {
            let expected = (u as f64 + 0.5) / 4.0 - 0.5;
            assert!((up[[10, u]] - expected).abs() < 1e-12);
        }
    }
}
