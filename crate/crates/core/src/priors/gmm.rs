//! Full-covariance Gaussian mixtures over patch vectors, fitted by EM.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixture size used for the EPLL baseline at full scale.
pub const DEFAULT_COMPONENTS: usize = 200;

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov`.
    chol: DMatrix<f64>,
    /// `log w - sum log L_ii - (s/2) log 2 pi`
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
            .l();
        let dim = mean.len() as f64;
        let log_det_half: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
        Ok(Self {
            weight,
            log_norm: weight.ln() - log_det_half - 0.5 * dim * (2.0 * PI).ln(),
            mean,
            cov,
            chol,
        })
    }

    /// Whitened residuals `L^{-1}(p - mu)` for the columns of `diffs`.
    fn whiten(&self, diffs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .solve_lower_triangular(diffs)
            .expect("Cholesky factor has a positive diagonal")
    }
}

/// Gaussian mixture `sum_k w_k N(mu_k, Sigma_k)` on `R^s`.
#[derive(Debug, Clone)]
pub struct PatchGmm {
    dim: usize,
    components: Vec<Component>,
}

impl PatchGmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::InvalidArgument("mixture needs matching weights, means and covariances".into()));
        }
        let dim = means[0].len();
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights must be positive and sum to 1 (sum {total})")));
        }
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covs)
            .map(|((w, m), c)| {
                if m.len() != dim || c.len() != dim * dim {
                    return Err(Error::shape("mixture component", dim, m.len()));
                }
                let cov = DMatrix::from_row_slice(dim, dim, &c);
                if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
                Component::new(w, DVector::from_vec(m), cov)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, components })
    }

    /// Single standard normal component.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![DMatrix::<f64>::identity(dim, dim).as_slice().to_vec()])
            .expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        self.components[k].mean.as_slice()
    }

    /// Row-major covariance of component `k`.
    pub fn covariance(&self, k: usize) -> Vec<f64> {
        self.components[k].cov.transpose().as_slice().to_vec()
    }

    fn columns(&self, patches: ArrayView2<f64>) -> Result<DMatrix<f64>> {
        if patches.ncols() != self.dim {
            return Err(Error::shape("mixture input dimension", self.dim, patches.ncols()));
        }
        Ok(DMatrix::from_fn(self.dim, patches.nrows(), |r, c| patches[[c, r]]))
    }

    /// Per-component joint log densities `log w_k + log N(p_n | k)`, (K x N).
    fn joint_log(&self, cols: &DMatrix<f64>) -> DMatrix<f64> {
        let n = cols.ncols();
        let mut out = DMatrix::zeros(self.components.len(), n);
        for (k, comp) in self.components.iter().enumerate() {
            let mut diffs = cols.clone();
            for mut col in diffs.column_iter_mut() {
                col -= &comp.mean;
            }
            let white = comp.whiten(&diffs);
            for j in 0..n {
                out[(k, j)] = comp.log_norm - 0.5 * white.column(j).norm_squared();
            }
        }
        out
    }

    /// `log p(p)` for each row.
    pub fn logpdf_batch(&self, patches: ArrayView2<f64>) -> Result<Array1<f64>> {
        let joint = self.joint_log(&self.columns(patches)?);
        Ok(Array1::from_iter(joint.column_iter().map(|c| log_sum_exp(c.iter().copied()))))
    }

    pub fn logpdf(&self, p: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, p.len()), p).expect("row");
        Ok(self.logpdf_batch(view)?[0])
    }

    /// `log p` per row and `grad_p log p` per row.
    pub fn logpdf_grad_batch(&self, patches: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let cols = self.columns(patches)?;
        let n = cols.ncols();
        let joint = self.joint_log(&cols);
        let lse: Vec<f64> = joint.column_iter().map(|c| log_sum_exp(c.iter().copied())).collect();
        let mut grad = DMatrix::zeros(self.dim, n);
        for (k, comp) in self.components.iter().enumerate() {
            let mut diffs = cols.clone();
            for mut col in diffs.column_iter_mut() {
                col -= &comp.mean;
            }
            // Sigma^{-1}(p - mu) = L^{-T} L^{-1} (p - mu)
            let white = comp.whiten(&diffs);
            let prec = comp
                .chol
                .tr_solve_lower_triangular(&white)
                .expect("Cholesky factor has a positive diagonal");
            for j in 0..n {
                let resp = (joint[(k, j)] - lse[j]).exp();
                let mut g = grad.column_mut(j);
                g.axpy(-resp, &prec.column(j), 1.0);
            }
        }
        let grad = Array2::from_shape_fn((n, self.dim), |(j, r)| grad[(r, j)]);
        Ok((Array1::from(lse), grad))
    }

    pub fn logpdf_grad(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, p.len()), p).expect("row");
        let (v, g) = self.logpdf_grad_batch(view)?;
        Ok((v[0], g.row(0).to_vec()))
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.fold(0.0, |a, v| a + (v - max).exp()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Added to every covariance diagonal after each M-step.
    pub cov_floor: f64,
    /// Stops when the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            cov_floor: 1e-6,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub gmm: PatchGmm,
    /// Mean per-patch log-likelihood before each M-step, plus the final value.
    pub log_likelihood: Vec<f64>,
    /// Number of components that collapsed and were re-seeded.
    pub reinitialized: usize,
}

/// Fits a `k`-component full-covariance mixture by EM with k-means++ seeding.
pub fn gmm_fit(patches: ArrayView2<f64>, k: usize, config: &EmConfig) -> Result<GmmFit> {
    let n = patches.nrows();
    let dim = patches.ncols();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("need at least {k} > 0 patches, got {n}")));
    }
    if !(config.cov_floor >= 0.0) {
        return Err(Error::InvalidArgument("covariance floor must be non-negative".into()));
    }
    let data = DMatrix::from_fn(dim, n, |r, c| patches[[c, r]]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let global_mean = data.column_mean();
    let mut global_cov = DMatrix::zeros(dim, dim);
    for col in data.column_iter() {
        let d = col - &global_mean;
        global_cov.ger(1.0 / n as f64, &d, &d, 1.0);
    }
    let floor = DMatrix::<f64>::identity(dim, dim) * config.cov_floor;
    let base_cov = &global_cov + &floor;

    let means = kmeans_plus_plus(&data, k, &mut rng);
    let mut gmm = PatchGmm {
        dim,
        components: means
            .into_iter()
            .map(|m| Component::new(1.0 / k as f64, m, base_cov.clone()))
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::Numerical("singular data covariance; use a positive covariance floor".into()))?,
    };

    let mut trace = Vec::new();
    let mut reinitialized = 0;
    for _ in 0..config.max_iters {
        let joint = gmm.joint_log(&data);
        let lse: Vec<f64> = joint.column_iter().map(|c| log_sum_exp(c.iter().copied())).collect();
        let ll = lse.iter().sum::<f64>() / n as f64;
        if let Some(&prev) = trace.last() {
            if ll - prev < config.tol && reinitialized == 0 {
                trace.push(ll);
                break;
            }
        }
        trace.push(ll);

        let mut components = Vec::with_capacity(k);
        let worst = lse
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        for kk in 0..k {
            let resp: Vec<f64> = (0..n).map(|j| (joint[(kk, j)] - lse[j]).exp()).collect();
            let nk: f64 = resp.iter().sum();
            if nk < 1e-10 * n as f64 {
                reinitialized += 1;
                components.push((nk, data.column(worst).into_owned(), base_cov.clone()));
                continue;
            }
            let mut mean = DVector::zeros(dim);
            for (j, r) in resp.iter().enumerate() {
                mean.axpy(*r, &data.column(j), 1.0);
            }
            mean /= nk;
            let mut cov = DMatrix::zeros(dim, dim);
            for (j, r) in resp.iter().enumerate() {
                let d = data.column(j) - &mean;
                cov.ger(*r / nk, &d, &d, 1.0);
            }
            cov = (&cov + cov.transpose()) * 0.5 + &floor;
            components.push((nk, mean, cov));
        }
        let total: f64 = components.iter().map(|c| c.0.max(1e-10 * n as f64)).sum();
        gmm.components = components
            .into_iter()
            .map(|(nk, m, c)| {
                Component::new(nk.max(1e-10 * n as f64) / total, m, c).map_err(|_| {
                    Error::Numerical("singular covariance in EM; raise the covariance floor".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
    }
    if trace.len() == config.max_iters {
        let lse = gmm.logpdf_batch(patches)?;
        trace.push(lse.sum() / n as f64);
    }
    Ok(GmmFit {
        gmm,
        log_likelihood: trace,
        reinitialized,
    })
}

fn kmeans_plus_plus(data: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    let n = data.ncols();
    let mut centers = vec![data.column(rng.random_range(0..n)).into_owned()];
    let mut dist: Vec<f64> = (0..n).map(|j| (data.column(j) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (j, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = j;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = data.column(next).into_owned();
        for (j, d) in dist.iter_mut().enumerate() {
            *d = d.min((data.column(j) - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, ValueGrid};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn standard_normal_at_origin() {
        let g = PatchGmm::standard_normal(5);
        let v = g.logpdf(&[0.0; 5]).unwrap();
        assert!((v + 2.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn logpdf_gradient() {
        let g = PatchGmm::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 1.0, -1.0], vec![0.5, 0.2, 0.1]],
            vec![
                vec![1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 0.8],
                vec![0.3, 0.0, 0.05, 0.0, 0.4, 0.0, 0.05, 0.0, 0.2],
            ],
        )
        .unwrap();
        let r = grad_check(
            |p| {
                let (v, gr) = g.logpdf_grad(p.data())?;
                Ok((v, ValueGrid::from_vec(gr)?))
            },
            &ValueGrid::from_vec(vec![0.2, 0.4, -0.3]).unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PatchGmm::new(vec![0.5], vec![vec![0.0]], vec![vec![1.0]]).is_err());
        assert!(PatchGmm::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.0, 2.0, 2.0, 1.0]]).is_err());
    }

    #[test]
    fn two_clusters_and_monotone_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4000;
        let data = Array2::from_shape_fn((n, 2), |(i, _)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let offset = if i % 2 == 0 { -3.0 } else { 3.0 };
            offset + 0.5 * e
        });
        let fit = gmm_fit(data.view(), 2, &EmConfig::default()).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.log_likelihood);
        }
        let mut means: Vec<f64> = (0..2).map(|k| fit.gmm.mean(k)[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 3.0).abs() < 0.05 && (means[1] - 3.0).abs() < 0.05, "{means:?}");
    }

    #[test]
    fn single_gaussian_is_recovered() {
        // x = mu + L e with L L^T = sigma
        let mu = [0.5, -1.0, 2.0];
        let l = [[1.0, 0.0, 0.0], [0.5, 0.8, 0.0], [-0.3, 0.2, 0.6]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut data = Array2::zeros((n, 3));
        for mut row in data.rows_mut() {
            let e: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            for r in 0..3 {
                row[r] = mu[r] + (0..3).map(|c| l[r][c] * e[c]).sum::<f64>();
            }
        }
        let fit = gmm_fit(data.view(), 1, &EmConfig::default()).unwrap();
        for (a, b) in fit.gmm.mean(0).iter().zip(mu) {
            assert!((a - b).abs() < 0.01, "{a} vs {b}");
        }
        let cov = fit.gmm.covariance(0);
        let (mut diff, mut norm) = (0.0, 0.0);
        for r in 0..3 {
            for c in 0..3 {
                let exact: f64 = (0..3).map(|k| l[r][k] * l[c][k]).sum();
                diff += (cov[r * 3 + c] - exact).powi(2);
                norm += exact * exact;
            }
        }
        assert!((diff / norm).sqrt() < 0.05);
    }

    #[test]
    fn too_few_points() {
        let data = Array2::zeros((2, 3));
        assert!(gmm_fit(data.view(), 3, &EmConfig::default()).is_err());
    }

    #[test]
    fn singular_without_floor_errors() {
        let data = Array2::from_shape_fn((50, 2), |(i, j)| if j == 0 { i as f64 } else { 0.0 });
        let cfg = EmConfig {
            cov_floor: 0.0,
            ..EmConfig::default()
        };
        assert!(matches!(gmm_fit(data.view(), 1, &cfg), Err(Error::Numerical(_))));
        assert!(gmm_fit(data.view(), 1, &EmConfig::default()).is_ok());
    }
}
