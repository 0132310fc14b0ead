//! Shared machinery behind [`super::PatchFlow`] and [`super::ConditionalPatchFlow`].

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::subnet::{Subnet, SubnetCache};
use super::FlowArch;
use crate::diffcore::{ops, ParamSet};
use crate::error::{Error, Result};

/// One Glow-style affine coupling block.
///
/// The first subnet reads the first half (plus condition) and scales/shifts
/// the second half; the second subnet then reads the updated second half and
/// scales/shifts the first half.
#[derive(Debug, Clone)]
pub(crate) struct Coupling {
    pub first: Subnet,
    pub second: Subnet,
}

#[derive(Debug, Clone)]
pub(crate) struct CouplingFlow {
    pub arch: FlowArch,
    pub params: ParamSet,
    pub couplings: Vec<Coupling>,
    /// Permutation applied after coupling `k`: `out[j] = in[perm[j]]`.
    pub perms: Vec<Vec<usize>>,
}

/// Output of a (weighted) loss/gradient evaluation over a batch.
pub(crate) struct BatchLoss {
    /// `0.5 |T^{-1}(p)|^2 - log|det grad T^{-1}(p)|` per row.
    pub nll: Array1<f64>,
    pub input_grad: Option<Array2<f64>>,
}

struct BlockCache {
    x1: Array2<f64>,
    x2: Array2<f64>,
    raw_a: Array2<f64>,
    s_a: Array2<f64>,
    raw_b: Array2<f64>,
    s_b: Array2<f64>,
    cache_a: SubnetCache,
    cache_b: SubnetCache,
}

impl CouplingFlow {
    pub fn new(arch: FlowArch) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
        let half = arch.dim / 2;
        let mut params = ParamSet::new();
        let mut couplings = Vec::with_capacity(arch.blocks);
        let mut perms = Vec::with_capacity(arch.blocks);
        for k in 0..arch.blocks {
            let first = Subnet::register(
                &mut params,
                &format!("block{k}.first"),
                half + arch.cond_dim,
                arch.hidden,
                2 * half,
                &mut rng,
            )?;
            let second = Subnet::register(
                &mut params,
                &format!("block{k}.second"),
                half + arch.cond_dim,
                arch.hidden,
                2 * half,
                &mut rng,
            )?;
            couplings.push(Coupling { first, second });
            let mut perm: Vec<usize> = (0..arch.dim).collect();
            perm.shuffle(&mut rng);
            perms.push(perm);
        }
        Ok(Self {
            arch,
            params,
            couplings,
            perms,
        })
    }

    pub fn with_permutations(mut self, perms: Vec<Vec<usize>>) -> Result<Self> {
        if perms.len() != self.arch.blocks {
            return Err(Error::shape("permutation count", self.arch.blocks, perms.len()));
        }
        for p in &perms {
            check_permutation(p, self.arch.dim)?;
        }
        self.perms = perms;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    fn half(&self) -> usize {
        self.arch.dim / 2
    }

    fn check_inputs(&self, x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<()> {
        if x.ncols() != self.arch.dim {
            return Err(Error::shape("flow input dimension", self.arch.dim, x.ncols()));
        }
        match (cond, self.arch.cond_dim) {
            (None, 0) => Ok(()),
            (Some(c), d) if d > 0 => {
                if c.ncols() != d {
                    Err(Error::shape("condition dimension", d, c.ncols()))
                } else if c.nrows() != x.nrows() {
                    Err(Error::shape("condition rows", x.nrows(), c.nrows()))
                } else {
                    Ok(())
                }
            }
            (None, d) => Err(Error::shape("condition dimension", d, 0)),
            (Some(c), _) => Err(Error::shape("condition dimension", 0, c.ncols())),
        }
    }

    fn subnet_input(&self, half: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Array2<f64> {
        match cond {
            Some(c) => concatenate(Axis(1), &[half, c]).expect("rows aligned"),
            None => half.to_owned(),
        }
    }

    /// Splits raw subnet output into clamped log-scales and shifts.
    fn scale_shift(&self, raw: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = self.half();
        let s = ops::soft_clamp(raw.slice(s![.., ..h]), self.arch.clamp);
        let t = raw.slice(s![.., h..]).to_owned();
        (s, t)
    }

    fn batch_rows(&self) -> usize {
        (262_144 / self.arch.hidden.max(1)).clamp(64, 4096)
    }

    /// `p = T(z)` with `log|det grad T(z)|` per row.
    pub fn forward(&self, z: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_inputs(z, cond)?;
        let h = self.half();
        let mut x = z.to_owned();
        let mut logdet = Array1::zeros(z.nrows());
        for (coupling, perm) in self.couplings.iter().zip(&self.perms) {
            let x1 = x.slice(s![.., ..h]).to_owned();
            let x2 = x.slice(s![.., h..]).to_owned();
            let (raw_a, _) = coupling.first.forward(&self.params, self.subnet_input(x1.view(), cond), false);
            let (s_a, t_a) = self.scale_shift(&raw_a);
            let y2 = &x2 * &s_a.mapv(f64::exp) + &t_a;
            let (raw_b, _) = coupling.second.forward(&self.params, self.subnet_input(y2.view(), cond), false);
            let (s_b, t_b) = self.scale_shift(&raw_b);
            let y1 = &x1 * &s_b.mapv(f64::exp) + &t_b;
            logdet += &ops::row_sum(s_a.view());
            logdet += &ops::row_sum(s_b.view());
            let y = concatenate(Axis(1), &[y1.view(), y2.view()]).expect("halves");
            x = permute(y.view(), perm);
        }
        Ok((x, logdet))
    }

    /// `z = T^{-1}(p)` with `log|det grad T^{-1}(p)|` per row.
    pub fn inverse(&self, p: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_inputs(p, cond)?;
        let mut x = p.to_owned();
        let mut logdet = Array1::zeros(p.nrows());
        for (coupling, perm) in self.couplings.iter().zip(&self.perms).rev() {
            let y = unpermute(x.view(), perm);
            let (xin, ld, _) = self.coupling_inverse(coupling, y.view(), cond, false);
            logdet += &ld;
            x = xin;
        }
        Ok((x, logdet))
    }

    fn coupling_inverse(
        &self,
        coupling: &Coupling,
        y: ArrayView2<f64>,
        cond: Option<ArrayView2<f64>>,
        keep: bool,
    ) -> (Array2<f64>, Array1<f64>, Option<BlockCache>) {
        let h = self.half();
        let y1 = y.slice(s![.., ..h]);
        let y2 = y.slice(s![.., h..]);
        let (raw_b, cache_b) = coupling.second.forward(&self.params, self.subnet_input(y2, cond), keep);
        let (s_b, t_b) = self.scale_shift(&raw_b);
        let x1 = (&y1 - &t_b) * &s_b.mapv(|v| (-v).exp());
        let (raw_a, cache_a) = coupling.first.forward(&self.params, self.subnet_input(x1.view(), cond), keep);
        let (s_a, t_a) = self.scale_shift(&raw_a);
        let x2 = (&y2 - &t_a) * &s_a.mapv(|v| (-v).exp());
        let ld = -(ops::row_sum(s_a.view()) + ops::row_sum(s_b.view()));
        let x = concatenate(Axis(1), &[x1.view(), x2.view()]).expect("halves");
        let cache = keep.then(|| BlockCache {
            x1,
            x2,
            raw_a,
            s_a,
            raw_b,
            s_b,
            cache_a: cache_a.expect("kept"),
            cache_b: cache_b.expect("kept"),
        });
        (x, ld, cache)
    }

    /// Evaluates `nll(p) = 0.5|T^{-1}(p)|^2 - log|det grad T^{-1}(p)|` per row
    /// and back-propagates `weight * sum_rows nll` into the input and/or the
    /// parameter gradient accumulator.
    pub fn loss_backward(
        &self,
        p: ArrayView2<f64>,
        cond: Option<ArrayView2<f64>>,
        weight: f64,
        want_input: bool,
        mut param_grads: Option<&mut ParamSet>,
    ) -> Result<BatchLoss> {
        self.check_inputs(p, cond)?;
        let rows = p.nrows();
        let mut nll = Array1::zeros(rows);
        let mut input_grad = want_input.then(|| Array2::zeros(p.raw_dim()));
        let chunk = self.batch_rows();
        let mut start = 0;
        while start < rows {
            let end = (start + chunk).min(rows);
            let pc = p.slice(s![start..end, ..]);
            let cc = cond.map(|c| c.slice_move(s![start..end, ..]));
            let (vals, g) = self.loss_backward_chunk(pc, cc, weight, param_grads.as_deref_mut())?;
            nll.slice_mut(s![start..end]).assign(&vals);
            if let Some(ig) = input_grad.as_mut() {
                ig.slice_mut(s![start..end, ..]).assign(&g);
            }
            start = end;
        }
        Ok(BatchLoss { nll, input_grad })
    }

    fn loss_backward_chunk(
        &self,
        p: ArrayView2<f64>,
        cond: Option<ArrayView2<f64>>,
        weight: f64,
        mut param_grads: Option<&mut ParamSet>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let h = self.half();
        let clamp = self.arch.clamp;
        let mut x = p.to_owned();
        let mut logdet = Array1::<f64>::zeros(p.nrows());
        let mut caches = Vec::with_capacity(self.couplings.len());
        for (coupling, perm) in self.couplings.iter().zip(&self.perms).rev() {
            let y = unpermute(x.view(), perm);
            let (xin, ld, cache) = self.coupling_inverse(coupling, y.view(), cond, true);
            logdet += &ld;
            caches.push(cache.expect("kept"));
            x = xin;
        }
        let z = x;
        let nll = z.map_axis(Axis(1), |row| 0.5 * row.iter().fold(0.0, |a, v| a + v * v)) - &logdet;
        if let Some(i) = nll.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("flow negative log-likelihood at row {i}")));
        }

        // d(weight * sum nll)/dz = weight * z, and each log-scale enters
        // -logdet_inv with coefficient +1, so d/ds = weight.
        let mut g = z * weight;
        // caches are in inverse-evaluation order: coupling K-1 first, coupling 0 last.
        for (k, cache) in caches.iter().enumerate().rev() {
            let idx = self.couplings.len() - 1 - k;
            let coupling = &self.couplings[idx];
            let gx1 = g.slice(s![.., ..h]).to_owned();
            let gx2 = g.slice(s![.., h..]).to_owned();

            // x2 = (y2 - t_a) * exp(-s_a)
            let e_a = cache.s_a.mapv(|v| (-v).exp());
            let mut gy2 = &gx2 * &e_a;
            let gt_a = -&gy2;
            let gs_a = -(&gx2 * &cache.x2) + weight;
            let gsraw_a = ops::soft_clamp_backward(cache.raw_a.slice(s![.., ..h]), gs_a.view(), clamp);
            let graw_a = concatenate(Axis(1), &[gsraw_a.view(), gt_a.view()]).expect("halves");
            let gin_a = coupling
                .first
                .backward(&self.params, &cache.cache_a, graw_a.view(), param_grads.as_deref_mut());
            let gx1_total = gx1 + &gin_a.slice(s![.., ..h]);

            // x1 = (y1 - t_b) * exp(-s_b)
            let e_b = cache.s_b.mapv(|v| (-v).exp());
            let gy1 = &gx1_total * &e_b;
            let gt_b = -&gy1;
            let gs_b = -(&gx1_total * &cache.x1) + weight;
            let gsraw_b = ops::soft_clamp_backward(cache.raw_b.slice(s![.., ..h]), gs_b.view(), clamp);
            let graw_b = concatenate(Axis(1), &[gsraw_b.view(), gt_b.view()]).expect("halves");
            let gin_b = coupling
                .second
                .backward(&self.params, &cache.cache_b, graw_b.view(), param_grads.as_deref_mut());
            gy2 += &gin_b.slice(s![.., ..h]);

            let gy = concatenate(Axis(1), &[gy1.view(), gy2.view()]).expect("halves");
            g = permute(gy.view(), &self.perms[idx]);
        }
        Ok((nll, g))
    }

    /// Per-coordinate log-scales of the whole map when every subnet output
    /// is constant (zero output weights); `None` otherwise.
    pub fn constant_log_scales(&self) -> Option<Vec<f64>> {
        let h = self.half();
        let mut ls = vec![0.0; self.arch.dim];
        for (coupling, perm) in self.couplings.iter().zip(&self.perms) {
            if !coupling.first.output_weight_is_zero(&self.params)
                || !coupling.second.output_weight_is_zero(&self.params)
            {
                return None;
            }
            let sa = coupling.first.output_bias(&self.params);
            let sb = coupling.second.output_bias(&self.params);
            for j in 0..h {
                ls[j] += ops::soft_clamp_scalar(sb[j], self.arch.clamp);
                ls[h + j] += ops::soft_clamp_scalar(sa[j], self.arch.clamp);
            }
            ls = perm.iter().map(|&src| ls[src]).collect();
        }
        Some(ls)
    }
}

pub(crate) fn check_permutation(perm: &[usize], dim: usize) -> Result<()> {
    if perm.len() != dim {
        return Err(Error::shape("permutation length", dim, perm.len()));
    }
    let mut seen = vec![false; dim];
    for &p in perm {
        if p >= dim || seen[p] {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// `out[:, j] = x[:, perm[j]]`
fn permute(x: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (j, &src) in perm.iter().enumerate() {
        out.column_mut(j).assign(&x.column(src));
    }
    out
}

/// Inverse of [`permute`].
fn unpermute(y: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(y.raw_dim());
    for (j, &dst) in perm.iter().enumerate() {
        out.column_mut(dst).assign(&y.column(j));
    }
    out
}
