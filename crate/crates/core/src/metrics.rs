//! Image quality measures and patch likelihood histograms.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::PatchFlow;
use crate::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Box blur length used by [`blur_effect`].
pub const BLUR_EFFECT_TAPS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    /// Peak value 1.
    Unit,
    /// Peak value `max - min` of the reference image.
    Adaptive,
}

fn same_shape(x: &Image, reference: &Image) -> Result<()> {
    if x.dim() != reference.dim() {
        return Err(Error::shape("metric inputs", format!("{:?}", reference.dim()), format!("{:?}", x.dim())));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    Ok(())
}

fn value_range(x: &Image) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// `10 log10(range^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(x: &Image, reference: &Image, mode: RangeMode) -> Result<f64> {
    same_shape(x, reference)?;
    let range = match mode {
        RangeMode::Unit => 1.0,
        RangeMode::Adaptive => value_range(reference),
    };
    if range <= 0.0 {
        return Err(Error::InvalidArgument("reference image has zero dynamic range".into()));
    }
    let mse = (x - reference).mapv(|v| v * v).sum() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (range * range / mse).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 7, k1: 0.01, k2: 0.03 }
    }
}

/// Structural similarity with the default 7x7 box window and the
/// reference's dynamic range (1 when the reference is constant).
pub fn ssim(x: &Image, reference: &Image) -> Result<f64> {
    let range = value_range(reference);
    ssim_with(x, reference, &SsimConfig::default(), if range > 0.0 { range } else { 1.0 })
}

/// Mean local SSIM over all windows lying inside the image.
///
/// Local variances and covariance use the unbiased (sample) normalization.
pub fn ssim_with(x: &Image, reference: &Image, cfg: &SsimConfig, data_range: f64) -> Result<f64> {
    same_shape(x, reference)?;
    let w = cfg.window;
    let (h, wd) = x.dim();
    if w < 2 || h < w || wd < w {
        return Err(Error::InvalidArgument(format!("image {:?} smaller than the {w}x{w} window", x.dim())));
    }
    let n = (w * w) as f64;
    let c1 = (cfg.k1 * data_range).powi(2);
    let c2 = (cfg.k2 * data_range).powi(2);
    let sx = integral(x.view(), |a| a);
    let sy = integral(reference.view(), |a| a);
    let sxx = integral(x.view(), |a| a * a);
    let syy = integral(reference.view(), |a| a * a);
    let xy = x * reference;
    let sxy = integral(xy.view(), |a| a);
    let mut total = 0.0;
    let windows = (h - w + 1) * (wd - w + 1);
    for i in 0..=h - w {
        for j in 0..=wd - w {
            let box_sum = |t: &Array2<f64>| t[[i + w, j + w]] - t[[i, j + w]] - t[[i + w, j]] + t[[i, j]];
            let (mx, my) = (box_sum(&sx) / n, box_sum(&sy) / n);
            let vx = (box_sum(&sxx) - n * mx * mx) / (n - 1.0);
            let vy = (box_sum(&syy) - n * my * my) / (n - 1.0);
            let cxy = (box_sum(&sxy) - n * mx * my) / (n - 1.0);
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / windows as f64)
}

/// Summed-area table with a leading row and column of zeros.
fn integral(x: ArrayView2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut t = Array2::zeros((h + 1, w + 1));
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += f(x[[i, j]]);
            t[[i + 1, j + 1]] = t[[i, j + 1]] + row;
        }
    }
    t
}

/// No-reference blur estimate in `[0, 1]`, higher meaning blurrier.
///
/// The image is re-blurred along each axis with a box filter; the score
/// measures how little neighbor differences drop under that extra blur.
/// The larger of the two axis scores is returned. A constant image has no
/// variation to lose and scores 1.
pub fn blur_effect(x: &Image) -> f64 {
    let mut worst: f64 = 0.0;
    for axis in 0..2 {
        let view = if axis == 0 { x.view() } else { x.t() };
        let (h, w) = view.dim();
        let half = BLUR_EFFECT_TAPS as isize / 2;
        let blurred = Array2::from_shape_fn((h, w), |(i, j)| {
            let mut acc = 0.0;
            for d in -half..=half {
                let ii = (i as isize + d).clamp(0, h as isize - 1) as usize;
                acc += view[[ii, j]];
            }
            acc / BLUR_EFFECT_TAPS as f64
        });
        let (mut s_f, mut s_v) = (0.0, 0.0);
        for i in 1..h {
            for j in 0..w {
                let d_f = (view[[i, j]] - view[[i - 1, j]]).abs();
                let d_b = (blurred[[i, j]] - blurred[[i - 1, j]]).abs();
                s_f += d_f;
                s_v += (d_f - d_b).max(0.0);
            }
        }
        let b = if s_f > 0.0 { (s_f - s_v) / s_f } else { 1.0 };
        worst = worst.max(b);
    }
    worst
}

/// Removes `width` pixels from every side.
pub fn crop_border(x: &Image, width: usize) -> Result<Image> {
    let (h, w) = x.dim();
    if 2 * width >= h || 2 * width >= w {
        return Err(Error::InvalidArgument(format!("crop {width} leaves nothing of {h}x{w}")));
    }
    Ok(x.slice(s![width..h - width, width..w - width]).to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub blur_effect: f64,
    pub crop: usize,
}

/// All measures after cropping both images by `crop` pixels.
pub fn evaluate(x: &Image, reference: &Image, crop: usize, mode: RangeMode) -> Result<MetricReport> {
    same_shape(x, reference)?;
    let (xc, rc) = if crop > 0 { (crop_border(x, crop)?, crop_border(reference, crop)?) } else { (x.clone(), reference.clone()) };
    let range = match mode {
        RangeMode::Unit => 1.0,
        RangeMode::Adaptive => value_range(&rc),
    };
    Ok(MetricReport {
        psnr: psnr(&xc, &rc, mode)?,
        ssim: ssim_with(&xc, &rc, &SsimConfig::default(), if range > 0.0 { range } else { 1.0 })?,
        blur_effect: blur_effect(&xc),
        crop,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllHistogram {
    /// `bins + 1` increasing bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub values: Vec<f64>,
    pub mean: f64,
}

impl NllHistogram {
    /// Bins `values` over their own range (a unit-width range around a
    /// single repeated value).
    pub fn from_values(values: Vec<f64>, bins: usize) -> Result<Self> {
        if bins == 0 || values.is_empty() {
            return Err(Error::InvalidArgument("histogram needs values and at least one bin".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("patch nll {v}")));
        }
        let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in &values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Self { edges, counts, values, mean })
    }

    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let bins = self.counts.len();
        if v < self.edges[0] || v > self.edges[bins] {
            return None;
        }
        let width = (self.edges[bins] - self.edges[0]) / bins as f64;
        Some((((v - self.edges[0]) / width) as usize).min(bins - 1))
    }
}

/// Per-patch negative log-likelihoods under `flow`, binned.
pub fn nll_histogram(flow: &PatchFlow, patches: ArrayView2<f64>, bins: usize) -> Result<NllHistogram> {
    let values = flow.nll_batch(patches)?.to_vec();
    NllHistogram::from_values(values, bins)
}

/// Mean difference `mean(b) - mean(a)` and its Welch t-statistic.
pub fn separation(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("need at least two values per sample".into()));
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var / n)
    };
    let (ma, sa) = stats(a);
    let (mb, sb) = stats(b);
    let diff = mb - ma;
    let se = (sa + sb).sqrt();
    Ok((diff, if se > 0.0 { diff / se } else { f64::INFINITY * diff.signum() }))
}
