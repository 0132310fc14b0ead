//! Synthetic images: grain textures, phantoms and blur kernels.
//!
//! Everything here is seeded so that tests and examples run without any
//! external data.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Image;

/// Grain-like microstructure in `[0, 1]`: overlapping soft disks of varying
/// brightness over a smooth, faintly noisy background.
pub fn texture(rows: usize, cols: usize, seed: u64) -> Image {
    let pad = 6;
    let (h, w) = (rows + 2 * pad, cols + 2 * pad);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Array2::from_elem((h, w), 0.15);
    let grains = (h * w) / 40;
    for _ in 0..grains {
        let ci = rng.random_range(0.0..h as f64);
        let cj = rng.random_range(0.0..w as f64);
        let r: f64 = rng.random_range(1.5..4.5);
        let level = rng.random_range(0.35..1.0);
        let (i0, i1) = ((ci - r - 1.0).max(0.0) as usize, ((ci + r + 2.0) as usize).min(h));
        let (j0, j1) = ((cj - r - 1.0).max(0.0) as usize, ((cj + r + 2.0) as usize).min(w));
        for i in i0..i1 {
            for j in j0..j1 {
                let d = (i as f64 - ci).hypot(j as f64 - cj);
                let cover = (r + 0.5 - d).clamp(0.0, 1.0);
                let v = level * (1.0 - 0.3 * (d / r).min(1.0).powi(2));
                canvas[[i, j]] = canvas[[i, j]] * (1.0 - cover) + cover * v.max(canvas[[i, j]]);
            }
        }
    }
    for v in canvas.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += 0.04 * n;
    }
    let smooth = box_smooth(&canvas);
    let crop = smooth.slice(ndarray::s![pad..pad + rows, pad..pad + cols]).to_owned();
    rescale_unit(crop)
}

/// 3x3 binomial smoothing with clamped borders.
fn box_smooth(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let taps = [(0usize, 0.25), (1, 0.5), (2, 0.25)];
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for &(a, wa) in &taps {
            let ii = (i + a).saturating_sub(1).min(h - 1);
            for &(b, wb) in &taps {
                let jj = (j + b).saturating_sub(1).min(w - 1);
                acc += wa * wb * x[[ii, jj]];
            }
        }
        acc
    })
}

fn rescale_unit(mut x: Image) -> Image {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        x.mapv_inplace(|v| (v - lo) / (hi - lo));
    }
    x
}

/// Modified (high contrast) Shepp-Logan head phantom in `[0, 1]`.
pub fn shepp_logan(size: usize) -> Image {
    // value, semi-axes, center, rotation in degrees
    const ELLIPSES: [[f64; 6]; 10] = [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ];
    let n = size as f64;
    Image::from_shape_fn((size, size), |(i, j)| {
        let x = -1.0 + (2.0 * j as f64 + 1.0) / n;
        let y = 1.0 - (2.0 * i as f64 + 1.0) / n;
        let mut v = 0.0;
        for e in &ELLIPSES {
            let (s, c) = (e[5] * PI / 180.0).sin_cos();
            let (dx, dy) = (x - e[3], y - e[4]);
            let u = (dx * c + dy * s) / e[1];
            let w = (-dx * s + dy * c) / e[2];
            if u * u + w * w <= 1.0 {
                v += e[0];
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Centered disk of radius `radius * size` pixels, anti-aliased by 4x4
/// supersampling.
pub fn disk_phantom(size: usize, radius: f64, value: f64) -> Image {
    let c = size as f64 / 2.0;
    let r = radius * size as f64;
    Image::from_shape_fn((size, size), |(i, j)| {
        let mut hits = 0;
        for a in 0..4 {
            for b in 0..4 {
                let y = i as f64 + (a as f64 + 0.5) / 4.0 - c;
                let x = j as f64 + (b as f64 + 0.5) / 4.0 - c;
                if x * x + y * y <= r * r {
                    hits += 1;
                }
            }
        }
        value * hits as f64 / 16.0
    })
}

/// Camera-shake style kernel: a smooth random trajectory along `angle`
/// (radians), splatted bilinearly and normalized to sum 1.
pub fn motion_blur_kernel(size: usize, angle: f64, seed: u64) -> Array2<f64> {
    assert!(size >= 3, "kernel needs at least 3 taps");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = Array2::<f64>::zeros((size, size));
    let c = (size as f64 - 1.0) / 2.0;
    let length = 0.7 * (size as f64 - 1.0);
    let (s, co) = angle.sin_cos();
    let steps = 8 * size;
    let (mut offset, mut drift) = (0.0f64, 0.0f64);
    for n in 0..steps {
        let t = n as f64 / (steps - 1) as f64 - 0.5;
        let kick: f64 = StandardNormal.sample(&mut rng);
        drift = 0.9 * drift + 0.05 * kick;
        offset = (offset + drift).clamp(-0.2 * length, 0.2 * length);
        let x = c + t * length * co - offset * s;
        let y = c - t * length * s - offset * co;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                let (r, col) = (y0 as usize + dy, x0 as usize + dx);
                if r < size && col < size {
                    k[[r, col]] += wy * wx;
                }
            }
        }
    }
    let total = k.sum();
    k /= total;
    k
}
