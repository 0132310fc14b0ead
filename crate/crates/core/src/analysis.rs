//! Numerical checks of the theory behind patch flows on tiny images:
//! the induced patch density, Gaussian sandwich bounds for bi-Lipschitz
//! flows and integrability of `exp(-rho R(x))`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{gaussian_constant, Lipschitz, PatchFlow};
use crate::patchops::PatchGeometry;
use crate::priors::patchnr;
use crate::Image;

/// Mixture of Gaussians with diagonal covariance over image vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

impl DiagonalMixture {
    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(Error::InvalidArgument("mixture needs matching weights, means and stds".into()));
        }
        let d = means[0].len();
        if means.iter().chain(&stds).any(|v| v.len() != d) {
            return Err(Error::InvalidArgument("mixture components differ in dimension".into()));
        }
        if stds.iter().flatten().any(|&s| !(s > 0.0)) || weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("weights and stds must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { weights, means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.marginal(&(0..self.dim()).collect::<Vec<_>>(), x)
    }

    /// Closed-form density of the coordinates `pixels` evaluated at `values`.
    pub fn marginal(&self, pixels: &[usize], values: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            let mut v = w;
            for (&j, &x) in pixels.iter().zip(values) {
                v *= normal_pdf(x, self.means[k][j], self.stds[k][j]);
            }
            total += v;
        }
        total
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut k = 0;
        let mut acc = self.weights[0];
        while u > acc && k + 1 < self.weights.len() {
            k += 1;
            acc += self.weights[k];
        }
        (0..self.dim())
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                self.means[k][j] + self.stds[k][j] * z
            })
            .collect()
    }

    /// Interval holding all but a negligible part of pixel `j`'s mass.
    fn support(&self, j: usize) -> (f64, f64) {
        let lo = (0..self.weights.len()).map(|k| self.means[k][j] - 10.0 * self.stds[k][j]).fold(f64::INFINITY, f64::min);
        let hi = (0..self.weights.len()).map(|k| self.means[k][j] + 10.0 * self.stds[k][j]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// An image density small enough for quadrature and brute-force sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    pub geometry: PatchGeometry,
    pub density: DiagonalMixture,
}

impl TinyInstance {
    pub fn new(geometry: PatchGeometry, density: DiagonalMixture) -> Result<Self> {
        let d = geometry.rows * geometry.cols;
        if density.dim() != d {
            return Err(Error::shape("tiny instance density", d, density.dim()));
        }
        if d > 6 {
            return Err(Error::InvalidArgument(format!("{d} pixels is too many for brute force")));
        }
        Ok(Self { geometry, density })
    }

    /// 1x3 image with independent unit-variance pixels and 1x2 patches.
    pub fn row3(mean: [f64; 3]) -> Self {
        let geometry = PatchGeometry::new(1, 3, 1, 2).expect("static geometry");
        let density = DiagonalMixture::gaussian(mean.to_vec(), vec![1.0; 3]).expect("static density");
        Self { geometry, density }
    }

    /// Flat pixel indices of patch `i` in patch order.
    fn patch_pixels(&self, i: usize) -> Vec<usize> {
        let g = &self.geometry;
        let (r0, c0) = g.corner(i).expect("valid patch");
        let mut px = Vec::with_capacity(g.patch_dim());
        for a in 0..g.patch_rows {
            for b in 0..g.patch_cols {
                px.push((r0 + a) * g.cols + c0 + b);
            }
        }
        px
    }

    pub fn patch_dim(&self) -> usize {
        self.geometry.patch_dim()
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn recurse(
        f: &mut dyn FnMut(f64) -> f64,
        (a, fa): (f64, f64),
        (m, fm): (f64, f64),
        (b, fb): (f64, f64),
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::Numerical(format!("quadrature did not converge on [{a}, {b}]")));
        }
        Ok(recurse(f, (a, fa), (lm, flm), (m, fm), left, tol / 2.0, depth - 1)?
            + recurse(f, (m, fm), (rm, frm), (b, fb), right, tol / 2.0, depth - 1)?)
    }
    // start from a coarse split so narrow peaks are not missed
    let mut total = 0.0;
    let panels = 8;
    let h = (b - a) / panels as f64;
    for k in 0..panels {
        let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
        let xm = 0.5 * (x0 + x1);
        let (f0, f1, fmid) = (f(x0), f(x1), f(xm));
        let whole = h / 6.0 * (f0 + 4.0 * fmid + f1);
        total += recurse(f, (x0, f0), (xm, fmid), (x1, f1), whole, tol / panels as f64, 40)?;
    }
    Ok(total)
}

/// Density of a uniformly chosen patch of an image drawn from the instance:
/// the average over patch positions of the image density integrated over
/// all pixels outside the patch.
pub fn lemma1_density(instance: &TinyInstance, p: &[f64]) -> Result<f64> {
    let s = instance.patch_dim();
    if p.len() != s {
        return Err(Error::shape("patch", s, p.len()));
    }
    let d = instance.density.dim();
    let np = instance.geometry.num_patches();
    let mut total = 0.0;
    for i in 0..np {
        let inside = instance.patch_pixels(i);
        let outside: Vec<usize> = (0..d).filter(|j| !inside.contains(j)).collect();
        let mut x = vec![0.0; d];
        for (&j, &v) in inside.iter().zip(p) {
            x[j] = v;
        }
        total += integrate_out(&instance.density, &mut x, &outside)?;
    }
    Ok(total / np as f64)
}

fn integrate_out(density: &DiagonalMixture, x: &mut Vec<f64>, free: &[usize]) -> Result<f64> {
    let Some((&j, rest)) = free.split_first() else {
        return Ok(density.pdf(x));
    };
    let (lo, hi) = density.support(j);
    let mut err = None;
    let value = adaptive_simpson(
        &mut |t| {
            x[j] = t;
            match integrate_out(density, x, rest) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        },
        lo,
        hi,
        1e-12,
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Same density from the closed-form marginals of the mixture.
pub fn lemma1_closed_form(instance: &TinyInstance, p: &[f64]) -> f64 {
    let np = instance.geometry.num_patches();
    (0..np).map(|i| instance.density.marginal(&instance.patch_pixels(i), p)).sum::<f64>() / np as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    /// Largest `|empirical - formula|` over the grid.
    pub max_deviation: f64,
    pub worst_point: Vec<f64>,
    pub grid_points: usize,
    pub samples: usize,
}

/// Histogram estimate of the patch density from `samples` draws of
/// `(X, I)` against the formula, on a grid with spacing `h` covering
/// `[lo, hi]` in every patch coordinate. Each grid point is the center of a
/// histogram cell of side `h`.
pub fn lemma1_check(instance: &TinyInstance, samples: usize, lo: f64, hi: f64, h: f64, seed: u64) -> Result<Lemma1Report> {
    if !(h > 0.0 && hi > lo) || samples == 0 {
        return Err(Error::InvalidArgument("invalid histogram grid".into()));
    }
    let s = instance.patch_dim();
    let per_axis = ((hi - lo) / h).round() as usize + 1;
    let cells = per_axis.pow(s as u32);
    let mut counts = vec![0usize; cells];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np = instance.geometry.num_patches();
    let patches: Vec<Vec<usize>> = (0..np).map(|i| instance.patch_pixels(i)).collect();
    'draw: for _ in 0..samples {
        let x = instance.density.sample(&mut rng);
        let i = rng.random_range(0..np);
        let mut cell = 0;
        for &j in &patches[i] {
            let k = ((x[j] - lo) / h).round();
            if k < 0.0 || k >= per_axis as f64 {
                continue 'draw;
            }
            cell = cell * per_axis + k as usize;
        }
        counts[cell] += 1;
    }
    let volume = h.powi(s as i32);
    let mut report = Lemma1Report { max_deviation: 0.0, worst_point: vec![], grid_points: cells, samples };
    for (cell, &count) in counts.iter().enumerate() {
        let mut rem = cell;
        let mut p = vec![0.0; s];
        for k in (0..s).rev() {
            p[k] = lo + (rem % per_axis) as f64 * h;
            rem /= per_axis;
        }
        let empirical = count as f64 / (samples as f64 * volume);
        let dev = (empirical - lemma1_density(instance, &p)?).abs();
        if dev > report.max_deviation || report.worst_point.is_empty() {
            report.max_deviation = report.max_deviation.max(dev);
            report.worst_point = p;
        }
    }
    Ok(report)
}

fn certificate(flow: &PatchFlow) -> Result<Lipschitz> {
    flow.lipschitz_certificate()
        .ok_or_else(|| Error::InvalidArgument("flow has no bi-Lipschitz certificate".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma2Report {
    /// Smallest log-space gap to either bound.
    pub min_slack: f64,
    pub violations: usize,
    pub points: usize,
}

/// Checks `N(p | T(0), I/L^2) / (LK)^s <= p_T(p) <= (LK)^s N(p | T(0), K^2 I)`
/// in log space at random points around `T(0)`.
pub fn lemma2_check(flow: &PatchFlow, points: usize, seed: u64) -> Result<Lemma2Report> {
    let Lipschitz { k, l } = certificate(flow)?;
    let s = flow.dim();
    let sf = s as f64;
    let (center, _) = flow.forward_map(&vec![0.0; s])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Array2::zeros((points, s));
    for mut row in batch.rows_mut() {
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = center[j] + scale * z;
        }
    }
    let nll = flow.nll_batch(batch.view())?;
    let ln_lk = sf * (l * k).ln();
    let mut report = Lemma2Report { min_slack: f64::INFINITY, violations: 0, points };
    for (row, &v) in batch.rows().into_iter().zip(nll.iter()) {
        let r2: f64 = row.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
        let log_p = -v;
        // log N(p | c, sigma^2 I) = -r2/(2 sigma^2) - s ln sigma - (s/2) ln 2 pi
        let lower = -ln_lk - 0.5 * r2 * l * l + sf * l.ln() - gaussian_constant(s);
        let upper = ln_lk - 0.5 * r2 / (k * k) - sf * k.ln() - gaussian_constant(s);
        let slack = (log_p - lower).min(upper - log_p);
        if slack < -1e-10 {
            report.violations += 1;
        }
        report.min_slack = report.min_slack.min(slack);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Config {
    pub rho: f64,
    pub radii: Vec<f64>,
    /// Random starting directions in addition to the coordinate axes.
    pub directions: usize,
    pub ascent_steps: usize,
    pub seed: u64,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            rho: 1.0,
            radii: (2..=10).map(f64::from).collect(),
            directions: 32,
            ascent_steps: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Report {
    /// `(r, max_{|x| = r} log phi(x))`
    pub table: Vec<(f64, f64)>,
    /// Coefficient of `r^2` in a quadratic fit of the table.
    pub slope: f64,
    /// Interval the coefficient must lie in given the Lipschitz constants.
    pub bracket: (f64, f64),
}

impl Prop1Report {
    pub fn within_bracket(&self, rel_tol: f64) -> bool {
        let (lo, hi) = self.bracket;
        self.slope >= lo - rel_tol * lo.abs() && self.slope <= hi + rel_tol * hi.abs()
    }
}

fn log_phi(flow: &PatchFlow, geometry: &PatchGeometry, x: &[f64], rho: f64, all: &[usize]) -> Result<(f64, Vec<f64>)> {
    let image = Image::from_shape_vec((geometry.rows, geometry.cols), x.to_vec()).expect("sized image");
    let eval = patchnr(&image, flow, geometry, all)?;
    Ok((-rho * eval.value, eval.gradient.iter().map(|g| -rho * g).collect()))
}

/// Largest `log phi` on the sphere of radius `r`: best of the axes and random
/// directions, refined by projected gradient ascent.
fn sphere_max(flow: &PatchFlow, geometry: &PatchGeometry, r: f64, cfg: &Prop1Config, rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = geometry.rows * geometry.cols;
    let all = geometry.all_indices();
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for j in 0..d {
        for sign in [-1.0, 1.0] {
            let mut u = vec![0.0; d];
            u[j] = sign;
            candidates.push(u);
        }
    }
    for _ in 0..cfg.directions {
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        candidates.push(u);
    }
    let on_sphere = |u: &[f64]| -> Vec<f64> {
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter().map(|v| r * v / n).collect()
    };
    let mut best = (f64::NEG_INFINITY, vec![]);
    for u in candidates {
        let x = on_sphere(&u);
        let (v, _) = log_phi(flow, geometry, &x, cfg.rho, &all)?;
        if v > best.0 {
            best = (v, x);
        }
    }
    let (mut value, mut x) = best;
    let mut step = 0.25 * r;
    for _ in 0..cfg.ascent_steps {
        let (_, g) = log_phi(flow, geometry, &x, cfg.rho, &all)?;
        let radial: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / (r * r);
        let tangent: Vec<f64> = g.iter().zip(&x).map(|(a, b)| a - radial * b).collect();
        let norm = tangent.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        let trial = on_sphere(&x.iter().zip(&tangent).map(|(a, t)| a + step * t / norm).collect::<Vec<_>>());
        let (v, _) = log_phi(flow, geometry, &trial, cfg.rho, &all)?;
        if v > value {
            value = v;
            x = trial;
        } else {
            step *= 0.5;
            if step < 1e-12 * r {
                break;
            }
        }
    }
    Ok(value)
}

/// Least-squares coefficient `b` of `a + c r + b r^2`.
fn quadratic_coefficient(table: &[(f64, f64)]) -> Result<f64> {
    if table.len() < 3 {
        return Err(Error::InvalidArgument("need at least three radii".into()));
    }
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for &(r, v) in table {
        let row = nalgebra::Vector3::new(1.0, r, r * r);
        ata += row * row.transpose();
        aty += row * v;
    }
    let sol = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::Numerical("degenerate radius table".into()))?;
    Ok(sol[2])
}

/// Decay of `phi(x) = exp(-rho patchNR(x))` (all patches) along spheres.
///
/// For a flow with `Lip(T) <= K`, `Lip(T^{-1}) <= L` the patch nll grows
/// quadratically with coefficient between `1/(2K^2)` and `L^2/2`, so the
/// fitted coefficient of `r^2` lies in
/// `[-rho L^2 c_max / (2s), -rho c_min / (2s K^2)]` where `c_min`, `c_max`
/// are the smallest and largest pixel coverage counts.
pub fn prop1_tail_check(flow: &PatchFlow, geometry: &PatchGeometry, cfg: &Prop1Config) -> Result<Prop1Report> {
    let Lipschitz { k, l } = certificate(flow)?;
    if flow.dim() != geometry.patch_dim() {
        return Err(Error::shape("flow vs patch dimension", geometry.patch_dim(), flow.dim()));
    }
    if !(cfg.rho > 0.0) {
        return Err(Error::InvalidArgument("rho must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = Vec::with_capacity(cfg.radii.len());
    for &r in &cfg.radii {
        table.push((r, sphere_max(flow, geometry, r, cfg, &mut rng)?));
    }
    let slope = quadratic_coefficient(&table)?;
    let cov = geometry.coverage();
    let c_min = cov.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_max = cov.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s = geometry.patch_dim() as f64;
    let bracket = (-cfg.rho * l * l * c_max / (2.0 * s), -cfg.rho * c_min / (2.0 * s * k * k));
    Ok(Prop1Report { table, slope, bracket })
}

/// Exact `r^2` coefficient for the identity flow.
pub fn identity_decay(geometry: &PatchGeometry, rho: f64) -> f64 {
    let c_min = geometry.coverage().iter().cloned().fold(f64::INFINITY, f64::min);
    -rho * c_min / (2.0 * geometry.patch_dim() as f64)
}

/// Monte-Carlo estimate of `int_{[-w, w]^d} phi(x) dx` from `samples`
/// uniform points. Points are `w u` for the same seeded `u`, so estimates at
/// different widths share their randomness.
pub fn prop1_box_integral(flow: &PatchFlow, geometry: &PatchGeometry, rho: f64, half_width: f64, samples: usize, seed: u64) -> Result<f64> {
    if flow.dim() != geometry.patch_dim() {
        return Err(Error::shape("flow vs patch dimension", geometry.patch_dim(), flow.dim()));
    }
    let d = geometry.rows * geometry.cols;
    let np = geometry.num_patches();
    let s = geometry.patch_dim();
    let corners: Vec<(usize, usize)> = (0..np).map(|i| geometry.corner(i)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk = 1 << 14;
    let mut total = 0.0;
    let mut done = 0;
    while done < samples {
        let m = chunk.min(samples - done);
        let images: Vec<f64> = (0..m * d).map(|_| half_width * rng.random_range(-1.0..1.0)).collect();
        let mut patches = Array2::zeros((m * np, s));
        for img in 0..m {
            let x = &images[img * d..(img + 1) * d];
            for (i, &(r0, c0)) in corners.iter().enumerate() {
                let mut row = patches.row_mut(img * np + i);
                let mut t = 0;
                for a in 0..geometry.patch_rows {
                    for b in 0..geometry.patch_cols {
                        row[t] = x[(r0 + a) * geometry.cols + c0 + b];
                        t += 1;
                    }
                }
            }
        }
        let nll = flow.nll_const_free(patches.view())?;
        for img in 0..m {
            let sum: f64 = nll.slice(ndarray::s![img * np..(img + 1) * np]).sum();
            total += (-rho * sum / s as f64).exp();
        }
        done += m;
    }
    Ok(total / samples as f64 * (2.0 * half_width).powi(d as i32))
}

/// One line of the validation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

/// Runs every check with sample counts divided by `scale_down`.
pub fn validation_suite(scale_down: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let div = scale_down.max(1);
    let mut rows = Vec::new();

    let inst = TinyInstance::row3([0.0, 1.0, 2.0]);
    let mut worst: f64 = 0.0;
    for p in [[0.0, 1.0], [0.5, 0.5], [1.0, 2.0], [-1.0, 3.0]] {
        worst = worst.max((lemma1_density(&inst, &p)? - lemma1_closed_form(&inst, &p)).abs());
    }
    rows.push(CheckRow { name: "patch density quadrature vs closed form".into(), value: worst, bound: "< 1e-6".into(), pass: worst < 1e-6 });
    let r = lemma1_check(&inst, 1_000_000 / div, -1.5, 3.5, 0.25, seed)?;
    rows.push(CheckRow {
        name: "patch density vs sampled histogram".into(),
        value: r.max_deviation,
        bound: "< 0.01".into(),
        pass: r.max_deviation < 0.01,
    });

    let mut violations = 0;
    let mut slack = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for f in 0..20 {
        let s = 4;
        let scales: Vec<f64> = (0..s).map(|_| rng.random_range(0.5..2.0)).collect();
        let shifts: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
        let flow = PatchFlow::diagonal_affine(&scales, &shifts)?;
        let rep = lemma2_check(&flow, 10_000 / div, seed + f)?;
        violations += rep.violations;
        slack = slack.min(rep.min_slack);
    }
    rows.push(CheckRow { name: "gaussian sandwich violations".into(), value: violations as f64, bound: "= 0".into(), pass: violations == 0 });
    rows.push(CheckRow { name: "gaussian sandwich min slack".into(), value: slack, bound: ">= -1e-10".into(), pass: slack >= -1e-10 });

    let geom = PatchGeometry::new(2, 2, 1, 2)?;
    let flow = PatchFlow::identity(2)?;
    let cfg = Prop1Config { seed, ..Prop1Config::default() };
    let rep = prop1_tail_check(&flow, &geom, &cfg)?;
    let exact = identity_decay(&geom, cfg.rho);
    let rel = ((rep.slope - exact) / exact).abs();
    rows.push(CheckRow { name: "identity flow decay vs closed form".into(), value: rel, bound: "< 0.05".into(), pass: rep.slope < 0.0 && rel < 0.05 });
    let affine = PatchFlow::diagonal_affine(&[2.0, 2.0], &[1.0, 1.0])?;
    let rep = prop1_tail_check(&affine, &geom, &cfg)?;
    rows.push(CheckRow {
        name: "affine flow decay within Lipschitz bracket".into(),
        value: rep.slope,
        bound: format!("[{:.6}, {:.6}]", rep.bracket.0, rep.bracket.1),
        pass: rep.slope < 0.0 && rep.within_bracket(1e-6),
    });
    let n = 10_000_000 / div;
    let small = prop1_box_integral(&flow, &geom, 1.0, 6.0, n, seed)?;
    let large = prop1_box_integral(&flow, &geom, 1.0, 8.0, n, seed)?;
    let change = ((large - small) / small).abs();
    rows.push(CheckRow { name: "box integral change [-6,6]^4 -> [-8,8]^4".into(), value: change, bound: "< 0.01".into(), pass: change < 0.01 });
    Ok(rows)
}
