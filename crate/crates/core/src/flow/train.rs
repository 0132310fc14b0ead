//! Maximum-likelihood (forward KL) training of patch flows with Adam.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::CouplingFlow;
use super::{ConditionalPatchFlow, FlowArch, PatchFlow};
use crate::diffcore::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale setting: lr 1e-4, batch 32, 700k steps.
    pub fn full_scale() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            steps: 700_000,
            seed: 0,
        }
    }

    fn validate(&self, available: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument(format!("training config must be positive: {self:?}")));
        }
        if available < self.batch_size {
            return Err(Error::InvalidArgument(format!(
                "{available} training patches is fewer than the batch size {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Mean constant-free batch NLL after each step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
}

pub fn train_flow(patches: ArrayView2<f64>, arch: FlowArch, config: &TrainConfig) -> Result<(PatchFlow, TrainReport)> {
    train_flow_from(PatchFlow::new(arch)?, patches, config)
}

/// Continues training an existing flow.
pub fn train_flow_from(
    mut flow: PatchFlow,
    patches: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<(PatchFlow, TrainReport)> {
    let report = fit(&mut flow.inner, patches, None, config)?;
    Ok((flow, report))
}

pub fn train_cflow(
    patches: ArrayView2<f64>,
    conditions: ArrayView2<f64>,
    arch: FlowArch,
    config: &TrainConfig,
) -> Result<(ConditionalPatchFlow, TrainReport)> {
    if patches.nrows() != conditions.nrows() {
        return Err(Error::shape("patch/condition pairs", patches.nrows(), conditions.nrows()));
    }
    let arch = if arch.cond_dim == 0 {
        arch.with_cond_dim(conditions.ncols())
    } else {
        arch
    };
    let mut flow = ConditionalPatchFlow::new(arch)?;
    let report = fit(&mut flow.inner, patches, Some(conditions), config)?;
    Ok((flow, report))
}

fn gather(rows: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    rows.select(Axis(0), idx)
}

fn fit(
    flow: &mut CouplingFlow,
    patches: ArrayView2<f64>,
    conditions: Option<ArrayView2<f64>>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate(patches.nrows())?;
    if patches.ncols() != flow.arch.dim {
        return Err(Error::shape("training patch dimension", flow.arch.dim, patches.ncols()));
    }
    if !patches.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("training patches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::for_params(AdamConfig::with_lr(config.learning_rate), &flow.params);
    let mut grads = flow.params.zeros_like();
    let weight = 1.0 / config.batch_size as f64;
    let mut report = TrainReport {
        loss_trace: Vec::with_capacity(config.steps),
    };
    let n = patches.nrows();
    let mut idx = vec![0usize; config.batch_size];
    for step in 0..config.steps {
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
        let batch = gather(patches, &idx);
        let cond = conditions.map(|c| gather(c, &idx));
        grads.fill(0.0);
        let out = flow.loss_backward(batch.view(), cond.as_ref().map(|c| c.view()), weight, false, Some(&mut grads));
        let nll = match out {
            Ok(o) => o.nll,
            Err(e) => return Err(Error::NonFinite(format!("training diverged at step {step}: {e}"))),
        };
        let loss = nll.mean().unwrap_or(0.0);
        if !loss.is_finite() || !grads.iter().all(|(_, g)| g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "training diverged at step {step} (loss {loss}, lr {})",
                config.learning_rate
            )));
        }
        report.loss_trace.push(loss);
        adam_step(&mut flow.params, &grads, &mut adam)?;
    }
    Ok(report)
}
