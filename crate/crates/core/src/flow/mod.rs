//! Patch normalizing flows.
//!
//! A flow `T: R^s -> R^s` is a stack of affine coupling blocks, each followed
//! by a fixed coordinate permutation. Latents are standard normal, so the
//! patch density is `p(x) = N(T^{-1}(x) | 0, I) |det grad T^{-1}(x)|`.
//! The conditional flow feeds an extra condition vector into every subnet.

mod engine;
mod subnet;
mod train;

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{ops, ParamSet};
use crate::error::{Error, Result};
use engine::CouplingFlow;

pub use train::{train_cflow, train_flow, train_flow_from, TrainConfig, TrainReport};

/// Soft-clamp constant for coupling log-scales.
pub const DEFAULT_CLAMP: f64 = 1.9;

/// Architecture of a coupling flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowArch {
    /// Patch dimension `s` (must be even).
    pub dim: usize,
    /// Condition dimension; 0 for unconditional flows.
    pub cond_dim: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub clamp: f64,
    /// Seeds weight initialization and permutations.
    pub seed: u64,
}

impl FlowArch {
    /// Five coupling blocks with 512-unit subnets.
    pub fn patch(dim: usize) -> Self {
        Self {
            dim,
            cond_dim: 0,
            blocks: 5,
            hidden: 512,
            clamp: DEFAULT_CLAMP,
            seed: 0,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_cond_dim(mut self, cond_dim: usize) -> Self {
        self.cond_dim = cond_dim;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch dimension must be even and at least 2, got {}",
                self.dim
            )));
        }
        if self.blocks == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("flow needs at least one block and hidden unit".into()));
        }
        if !(self.clamp > 0.0) {
            return Err(Error::InvalidArgument(format!("clamp {} must be positive", self.clamp)));
        }
        Ok(())
    }
}

/// Lipschitz bounds `Lip(T) <= k`, `Lip(T^{-1}) <= l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lipschitz {
    pub k: f64,
    pub l: f64,
}

/// `(s/2) log(2 pi)`, the standard normal normalizer in dimension `s`.
pub fn gaussian_constant(dim: usize) -> f64 {
    0.5 * dim as f64 * (2.0 * PI).ln()
}

fn row(v: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView1::from(v).insert_axis(Axis(0))
}

fn standard_normal(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(&mut rng))
}

/// Unconditional patch flow.
#[derive(Debug, Clone)]
pub struct PatchFlow {
    inner: CouplingFlow,
}

impl PatchFlow {
    pub fn new(arch: FlowArch) -> Result<Self> {
        if arch.cond_dim != 0 {
            return Err(Error::InvalidArgument("unconditional flow with nonzero condition dimension".into()));
        }
        Ok(Self {
            inner: CouplingFlow::new(arch)?,
        })
    }

    /// Zero subnets and identity permutations: `T(z) = z`.
    pub fn identity(dim: usize) -> Result<Self> {
        let arch = FlowArch::patch(dim).with_hidden(8).with_blocks(1);
        let inner = CouplingFlow::new(arch)?.with_permutations(vec![(0..dim).collect()])?;
        Ok(Self { inner })
    }

    /// `T(z) = diag(scales) z + shifts` realised by a single coupling block
    /// with constant subnet outputs. Scales must be positive.
    pub fn diagonal_affine(scales: &[f64], shifts: &[f64]) -> Result<Self> {
        let dim = scales.len();
        if shifts.len() != dim {
            return Err(Error::shape("affine shifts", dim, shifts.len()));
        }
        if scales.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument("affine scales must be positive and finite".into()));
        }
        let max_log = scales.iter().map(|a| a.ln().abs()).fold(0.0, f64::max);
        let mut arch = FlowArch::patch(dim).with_hidden(8).with_blocks(1);
        arch.clamp = DEFAULT_CLAMP.max(2.0 * max_log);
        let mut inner = CouplingFlow::new(arch)?.with_permutations(vec![(0..dim).collect()])?;
        set_constant_affine(&mut inner, 0, scales, shifts);
        Ok(Self { inner })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn arch(&self) -> &FlowArch {
        &self.inner.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.inner.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.inner.params
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.inner.perms
    }

    /// Rebuilds a flow from stored architecture, permutations and parameters.
    pub fn from_parts(arch: FlowArch, perms: Vec<Vec<usize>>, flat_params: &[f64]) -> Result<Self> {
        if arch.cond_dim != 0 {
            return Err(Error::InvalidArgument("unconditional flow with nonzero condition dimension".into()));
        }
        let mut inner = CouplingFlow::new(arch)?.with_permutations(perms)?;
        inner.params.assign_flat(flat_params)?;
        Ok(Self { inner })
    }

    /// Adds `N(0, std^2)` noise to every parameter, including the
    /// zero-initialised output layers.
    pub fn perturb(&mut self, seed: u64, std: f64) {
        perturb_params(&mut self.inner.params, seed, std);
    }

    pub fn forward_map(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (p, ld) = self.inner.forward(row(z), None)?;
        Ok((p.row(0).to_vec(), ld[0]))
    }

    pub fn inverse_map(&self, p: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.inner.inverse(row(p), None)?;
        Ok((z.row(0).to_vec(), ld[0]))
    }

    /// Row-wise `T(z)` and `log|det grad T(z)|`.
    pub fn forward_batch(&self, z: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.inner.forward(z, None)
    }

    /// Row-wise `T^{-1}(p)` and `log|det grad T^{-1}(p)|`.
    pub fn inverse_batch(&self, p: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.inner.inverse(p, None)
    }

    /// Normalized negative log density of a single patch.
    pub fn nll(&self, p: &[f64]) -> Result<f64> {
        Ok(self.nll_batch(row(p))?[0])
    }

    /// Normalized negative log densities, one per row.
    pub fn nll_batch(&self, p: ArrayView2<f64>) -> Result<Array1<f64>> {
        let v = self.nll_const_free(p)? + gaussian_constant(self.dim());
        Ok(v)
    }

    /// `0.5 |T^{-1}(p)|^2 - log|det grad T^{-1}(p)|` per row, without the
    /// Gaussian normalizer.
    pub fn nll_const_free(&self, p: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (z, ld) = self.inner.inverse(p, None)?;
        let v = z.map_axis(Axis(1), |r| 0.5 * r.iter().fold(0.0, |a, x| a + x * x)) - ld;
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("flow negative log-likelihood at row {i}")));
        }
        Ok(v)
    }

    /// Constant-free per-row NLL and the gradient of `weight * sum_rows nll`
    /// with respect to the patches.
    pub fn nll_input_grad(&self, p: ArrayView2<f64>, weight: f64) -> Result<(Array1<f64>, Array2<f64>)> {
        let out = self.inner.loss_backward(p, None, weight, true, None)?;
        Ok((out.nll, out.input_grad.expect("requested")))
    }

    /// Constant-free per-row NLL; accumulates the gradient of
    /// `weight * sum_rows nll` with respect to the parameters into `grads`.
    pub fn nll_param_grad(&self, p: ArrayView2<f64>, weight: f64, grads: &mut ParamSet) -> Result<Array1<f64>> {
        Ok(self.inner.loss_backward(p, None, weight, false, Some(grads))?.nll)
    }

    /// `n` samples `T(z)`, `z ~ N(0, I)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let z = standard_normal(n, self.dim(), seed);
        Ok(self.inner.forward(z.view(), None)?.0)
    }

    /// Exact bounds when the flow is a diagonal affine map (all subnet
    /// outputs constant); `None` when no certificate is available.
    pub fn lipschitz_certificate(&self) -> Option<Lipschitz> {
        lipschitz_from_scales(&self.inner.constant_log_scales()?)
    }
}

/// Flow `T(c; .)` on patches with a condition vector fed to every subnet.
#[derive(Debug, Clone)]
pub struct ConditionalPatchFlow {
    inner: CouplingFlow,
}

impl ConditionalPatchFlow {
    pub fn new(arch: FlowArch) -> Result<Self> {
        if arch.cond_dim == 0 {
            return Err(Error::InvalidArgument("conditional flow needs a condition dimension".into()));
        }
        Ok(Self {
            inner: CouplingFlow::new(arch)?,
        })
    }

    pub fn from_parts(arch: FlowArch, perms: Vec<Vec<usize>>, flat_params: &[f64]) -> Result<Self> {
        if arch.cond_dim == 0 {
            return Err(Error::InvalidArgument("conditional flow needs a condition dimension".into()));
        }
        let mut inner = CouplingFlow::new(arch)?.with_permutations(perms)?;
        inner.params.assign_flat(flat_params)?;
        Ok(Self { inner })
    }

    /// Embeds an unconditional flow: identical subnet weights on the patch
    /// inputs, zero weights on the condition inputs.
    pub fn from_unconditional(flow: &PatchFlow, cond_dim: usize) -> Result<Self> {
        let arch = flow.arch().with_cond_dim(cond_dim);
        let mut inner = CouplingFlow::new(arch)?.with_permutations(flow.permutations().to_vec())?;
        let half = arch.dim / 2;
        for (k, (name, grid)) in flow.params().iter().enumerate() {
            debug_assert_eq!(inner.params.name(k), name);
            let target = inner.params.get_mut(k);
            let src = grid.data();
            if name.ends_with("fc1.weight") {
                let out = grid.shape()[0];
                let dst = target.data_mut();
                dst.fill(0.0);
                for r in 0..out {
                    dst[r * (half + cond_dim)..r * (half + cond_dim) + half]
                        .copy_from_slice(&src[r * half..(r + 1) * half]);
                }
            } else {
                target.data_mut().copy_from_slice(src);
            }
        }
        Ok(Self { inner })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn cond_dim(&self) -> usize {
        self.inner.arch.cond_dim
    }

    pub fn arch(&self) -> &FlowArch {
        &self.inner.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.inner.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.inner.params
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.inner.perms
    }

    pub fn perturb(&mut self, seed: u64, std: f64) {
        perturb_params(&mut self.inner.params, seed, std);
    }

    pub fn forward_map(&self, c: &[f64], z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (p, ld) = self.inner.forward(row(z), Some(row(c)))?;
        Ok((p.row(0).to_vec(), ld[0]))
    }

    pub fn inverse_map(&self, c: &[f64], p: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.inner.inverse(row(p), Some(row(c)))?;
        Ok((z.row(0).to_vec(), ld[0]))
    }

    pub fn forward_batch(&self, c: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.inner.forward(z, Some(c))
    }

    pub fn inverse_batch(&self, c: ArrayView2<f64>, p: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.inner.inverse(p, Some(c))
    }

    /// Normalized conditional negative log density.
    pub fn cnll(&self, c: &[f64], p: &[f64]) -> Result<f64> {
        Ok(self.cnll_batch(row(c), row(p))?[0])
    }

    pub fn cnll_batch(&self, c: ArrayView2<f64>, p: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.cnll_const_free(c, p)? + gaussian_constant(self.dim()))
    }

    pub fn cnll_const_free(&self, c: ArrayView2<f64>, p: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (z, ld) = self.inner.inverse(p, Some(c))?;
        let v = z.map_axis(Axis(1), |r| 0.5 * r.iter().fold(0.0, |a, x| a + x * x)) - ld;
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("conditional negative log-likelihood at row {i}")));
        }
        Ok(v)
    }

    /// Gradient with respect to the patches only; conditions are constants.
    pub fn cnll_input_grad(
        &self,
        c: ArrayView2<f64>,
        p: ArrayView2<f64>,
        weight: f64,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let out = self.inner.loss_backward(p, Some(c), weight, true, None)?;
        Ok((out.nll, out.input_grad.expect("requested")))
    }

    pub fn cnll_param_grad(
        &self,
        c: ArrayView2<f64>,
        p: ArrayView2<f64>,
        weight: f64,
        grads: &mut ParamSet,
    ) -> Result<Array1<f64>> {
        Ok(self.inner.loss_backward(p, Some(c), weight, false, Some(grads))?.nll)
    }

    /// `n` samples of `T(c; z)` for a fixed condition.
    pub fn sample(&self, c: &[f64], n: usize, seed: u64) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let z = standard_normal(n, self.dim(), seed);
        let cond = Array2::from_shape_fn((n, c.len()), |(_, j)| c[j]);
        Ok(self.inner.forward(z.view(), Some(cond.view()))?.0)
    }
}

fn lipschitz_from_scales(log_scales: &[f64]) -> Option<Lipschitz> {
    let max = log_scales.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_scales.iter().copied().fold(f64::INFINITY, f64::min);
    Some(Lipschitz {
        k: max.exp(),
        l: (-min).exp(),
    })
}

fn perturb_params(params: &mut ParamSet, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in params.grids_mut() {
        for v in g.data_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += std * e;
        }
    }
}

/// Sets block `k` of `flow` to constant per-coordinate scales and shifts.
fn set_constant_affine(flow: &mut CouplingFlow, k: usize, scales: &[f64], shifts: &[f64]) {
    let h = flow.arch.dim / 2;
    let clamp = flow.arch.clamp;
    let coupling = flow.couplings[k].clone();
    let raw = |a: f64| ops::soft_clamp_inverse(a.ln(), clamp);
    // first subnet acts on the second half, second subnet on the first half
    let first_bias = flow.params.get_mut(coupling.first.layers[2].b).data_mut();
    for j in 0..h {
        first_bias[j] = raw(scales[h + j]);
        first_bias[h + j] = shifts[h + j];
    }
    let second_bias = flow.params.get_mut(coupling.second.layers[2].b).data_mut();
    for j in 0..h {
        second_bias[j] = raw(scales[j]);
        second_bias[h + j] = shifts[j];
    }
}

#[cfg(test)]
mod tests;
