use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{check_shape, LinearOperator};
use crate::error::{Error, Result};
use crate::Image;

/// Angle x detector-bin grid of line integrals.
pub type Sinogram = Array2<f64>;

/// Cutoff of the Hann window relative to the Nyquist frequency.
pub const DEFAULT_FREQUENCY_SCALING: f64 = 0.641;

/// Parallel-beam acquisition geometry.
///
/// The image covers `[-width/2, width/2] x [-height/2, height/2]` with row 0
/// at the top. Detector bins are centered on `[-detector/2, detector/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadonGeometry {
    pub rows: usize,
    pub cols: usize,
    pub width: f64,
    pub height: f64,
    pub bins: usize,
    pub detector: f64,
    pub angles: Vec<f64>,
}

impl RadonGeometry {
    /// Square image of side `extent`, `n_angles` equispaced angles in `[0, pi)`
    /// and a detector spanning the image diagonal.
    pub fn parallel(size: usize, extent: f64, bins: usize, n_angles: usize) -> Result<Self> {
        let angles = (0..n_angles).map(|k| k as f64 * PI / n_angles as f64).collect();
        let geom = Self {
            rows: size,
            cols: size,
            width: extent,
            height: extent,
            bins,
            detector: extent * 2f64.sqrt(),
            angles,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// 362x362 pixels on 26cm, 513 bins, 1000 angles.
    pub fn lodopab() -> Self {
        Self::parallel(362, 0.26, 513, 1000).expect("static geometry")
    }

    /// Same geometry with the first and last `cut` angles removed.
    pub fn limited(&self, cut: usize) -> Result<Self> {
        if 2 * cut >= self.angles.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot remove {cut} angles from each end of {}",
                self.angles.len()
            )));
        }
        let mut geom = self.clone();
        geom.angles = self.angles[cut..self.angles.len() - cut].to_vec();
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.bins == 0 {
            return Err(Error::InvalidArgument("geometry extents must be positive".into()));
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.detector > 0.0) {
            return Err(Error::InvalidArgument("physical sizes must be positive".into()));
        }
        if self.angles.is_empty() {
            return Err(Error::InvalidArgument("no projection angles".into()));
        }
        for w in self.angles.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument("angles must be strictly increasing".into()));
            }
        }
        let (first, last) = (self.angles[0], self.angles[self.angles.len() - 1]);
        if first < 0.0 || last >= PI {
            return Err(Error::InvalidArgument("angles must lie in [0, pi)".into()));
        }
        Ok(())
    }

    pub fn pixel_size(&self) -> (f64, f64) {
        (self.height / self.rows as f64, self.width / self.cols as f64)
    }

    pub fn bin_width(&self) -> f64 {
        self.detector / self.bins as f64
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        -self.detector / 2.0 + (b as f64 + 0.5) * self.bin_width()
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.angles.len(), self.bins)
    }

    /// Spacing between consecutive angles, assuming equispaced sampling.
    pub fn angle_step(&self) -> f64 {
        let n = self.angles.len();
        if n < 2 {
            return PI;
        }
        (self.angles[n - 1] - self.angles[0]) / (n - 1) as f64
    }
}

/// Ray-driven discrete Radon transform.
///
/// Each line integral is a midpoint sum over samples spaced half a pixel
/// apart, with bilinear interpolation between pixel centers. The sample
/// grid along the ray is shared by all rays, so the adjoint scatters with
/// exactly the same weights.
#[derive(Debug, Clone)]
pub struct Radon {
    geom: RadonGeometry,
    step: f64,
    samples: usize,
}

impl Radon {
    pub fn new(geom: RadonGeometry) -> Result<Self> {
        geom.validate()?;
        let (py, px) = geom.pixel_size();
        let step = 0.5 * px.min(py);
        let reach = 0.5 * (geom.width.hypot(geom.height) + px.max(py) * 2f64.sqrt());
        let samples = (2.0 * reach / step).ceil() as usize;
        Ok(Self { geom, step, samples })
    }

    pub fn geometry(&self) -> &RadonGeometry {
        &self.geom
    }

    /// Visits every `(pixel, weight)` contribution of one ray.
    fn trace<F: FnMut(usize, f64)>(&self, theta: f64, t: f64, mut visit: F) {
        let g = &self.geom;
        let (py, px) = g.pixel_size();
        let (sin, cos) = theta.sin_cos();
        let u0 = -(self.samples as f64) * self.step / 2.0;
        // interpolation support extends half a pixel past the image edges
        let (hx, hy) = (g.width / 2.0 + px / 2.0, g.height / 2.0 + py / 2.0);
        let (mut lo, mut hi) = (0.0f64, self.samples as f64);
        for (origin, dir, half) in [(t * cos, -sin, hx), (t * sin, cos, hy)] {
            if dir.abs() < 1e-15 {
                if origin.abs() >= half {
                    return;
                }
                continue;
            }
            // sample k sits at u0 + (k + 0.5) * step
            let a = ((-half - origin) / dir - u0) / self.step - 0.5;
            let b = ((half - origin) / dir - u0) / self.step - 0.5;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        if hi < lo {
            return;
        }
        let k_lo = lo.max(0.0).floor() as usize;
        let k_hi = (hi.ceil() as usize + 1).min(self.samples);
        let (rows, cols) = (g.rows as isize, g.cols as isize);
        for k in k_lo..k_hi {
            let u = u0 + (k as f64 + 0.5) * self.step;
            let x = t * cos - u * sin;
            let y = t * sin + u * cos;
            let cf = (x + g.width / 2.0) / px - 0.5;
            let rf = (g.height / 2.0 - y) / py - 0.5;
            let (c0, r0) = (cf.floor(), rf.floor());
            let (fc, fr) = (cf - c0, rf - r0);
            let (c0, r0) = (c0 as isize, r0 as isize);
            for (dr, wr) in [(0isize, 1.0 - fr), (1, fr)] {
                let r = r0 + dr;
                if r < 0 || r >= rows || wr == 0.0 {
                    continue;
                }
                for (dc, wc) in [(0isize, 1.0 - fc), (1, fc)] {
                    let c = c0 + dc;
                    if c < 0 || c >= cols || wc == 0.0 {
                        continue;
                    }
                    visit((r * cols + c) as usize, wr * wc * self.step);
                }
            }
        }
    }
}

impl LinearOperator for Radon {
    fn input_shape(&self) -> (usize, usize) {
        (self.geom.rows, self.geom.cols)
    }

    fn output_shape(&self) -> (usize, usize) {
        self.geom.sinogram_shape()
    }

    fn apply(&self, image: &Image) -> Result<Sinogram> {
        check_shape("radon input", self.input_shape(), image.dim())?;
        let pixels = image.as_standard_layout();
        let flat = pixels.as_slice().expect("standard layout");
        let mut sino = Sinogram::zeros(self.output_shape());
        for (a, &theta) in self.geom.angles.iter().enumerate() {
            for b in 0..self.geom.bins {
                let mut acc = 0.0;
                self.trace(theta, self.geom.bin_center(b), |i, w| acc += w * flat[i]);
                sino[[a, b]] = acc;
            }
        }
        Ok(sino)
    }

    fn adjoint(&self, sino: &Sinogram) -> Result<Image> {
        check_shape("radon adjoint input", self.output_shape(), sino.dim())?;
        let mut flat = vec![0.0; self.geom.rows * self.geom.cols];
        for (a, &theta) in self.geom.angles.iter().enumerate() {
            for b in 0..self.geom.bins {
                let v = sino[[a, b]];
                if v == 0.0 {
                    continue;
                }
                self.trace(theta, self.geom.bin_center(b), |i, w| flat[i] += w * v);
            }
        }
        Ok(Image::from_shape_vec((self.geom.rows, self.geom.cols), flat).expect("sized buffer"))
    }

    /// Hann-filtered backprojection at the default cutoff.
    fn naive_inverse(&self, sino: &Sinogram) -> Result<Image> {
        fbp(&self.geom, sino, FbpFilter::Hann, DEFAULT_FREQUENCY_SCALING)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FbpFilter {
    RamLak,
    Hann,
}

impl FbpFilter {
    fn window(self, nu: f64, scaling: f64) -> f64 {
        if nu > scaling {
            return 0.0;
        }
        match self {
            FbpFilter::RamLak => 1.0,
            FbpFilter::Hann => (PI * nu / (2.0 * scaling)).cos().powi(2),
        }
    }
}

/// Frequency response of the band-limited ramp, windowed.
fn ramp_response(bins: usize, dt: f64, filter: FbpFilter, scaling: f64) -> Vec<Complex<f64>> {
    let n = (2 * bins).next_power_of_two();
    let mut h = vec![Complex::new(0.0, 0.0); n];
    h[0].re = 1.0 / (4.0 * dt * dt);
    for k in (1..bins).step_by(2) {
        let v = -1.0 / ((k * k) as f64 * PI * PI * dt * dt);
        h[k].re = v;
        h[n - k].re = v;
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut h);
    for (k, z) in h.iter_mut().enumerate() {
        let nu = k.min(n - k) as f64 / (n / 2) as f64;
        *z *= filter.window(nu, scaling);
    }
    h
}

/// Filtered backprojection.
///
/// Each projection is convolved with the discrete ramp kernel (zero padded
/// to a power of two at least twice the bin count), windowed in frequency,
/// and backprojected with linear interpolation weighted by the angle step.
pub fn fbp(geom: &RadonGeometry, sino: &Sinogram, filter: FbpFilter, frequency_scaling: f64) -> Result<Image> {
    geom.validate()?;
    check_shape("fbp sinogram", geom.sinogram_shape(), sino.dim())?;
    if geom.angles.len() < 2 {
        return Err(Error::InvalidArgument("filtered backprojection needs at least 2 angles".into()));
    }
    if !(frequency_scaling > 0.0 && frequency_scaling <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "frequency scaling {frequency_scaling} outside (0, 1]"
        )));
    }
    let bins = geom.bins;
    let dt = geom.bin_width();
    let response = ramp_response(bins, dt, filter, frequency_scaling);
    let n = response.len();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let mut filtered = Array2::<f64>::zeros(sino.dim());
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for a in 0..geom.angles.len() {
        buf.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
        for b in 0..bins {
            buf[b].re = sino[[a, b]];
        }
        forward.process(&mut buf);
        for (z, h) in buf.iter_mut().zip(&response) {
            *z *= h;
        }
        inverse.process(&mut buf);
        for b in 0..bins {
            filtered[[a, b]] = buf[b].re * dt / n as f64;
        }
    }

    let (py, px) = geom.pixel_size();
    let weight = geom.angle_step();
    let t0 = geom.bin_center(0);
    let mut image = Image::zeros((geom.rows, geom.cols));
    for (a, &theta) in geom.angles.iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        let row = filtered.row(a);
        for i in 0..geom.rows {
            let y = geom.height / 2.0 - (i as f64 + 0.5) * py;
            for j in 0..geom.cols {
                let x = -geom.width / 2.0 + (j as f64 + 0.5) * px;
                let pos = (x * cos + y * sin - t0) / dt;
                let b0 = pos.floor();
                let f = pos - b0;
                let b0 = b0 as isize;
                let mut v = 0.0;
                if b0 >= 0 && (b0 as usize) < bins {
                    v += (1.0 - f) * row[b0 as usize];
                }
                if b0 + 1 >= 0 && ((b0 + 1) as usize) < bins {
                    v += f * row[(b0 + 1) as usize];
                }
                image[[i, j]] += weight * v;
            }
        }
    }
    Ok(image)
}
