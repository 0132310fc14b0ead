//! Patch likelihoods under a flow trained on clean texture patches:
//! clean test patches against their blurred and noisy counterparts, and
//! the flow against a Gaussian mixture fitted to the same patches.
//!
//!     cargo run --release --example patch_likelihoods

use patchnr::flow::{train_flow, FlowArch, TrainConfig};
use patchnr::metrics::{nll_histogram, separation, NllHistogram};
use patchnr::operators::{simulate_observation, Convolution, NoiseModel};
use patchnr::patchops::{extract_patches, PatchGeometry};
use patchnr::priors::{gmm_fit, EmConfig};
use patchnr::synth::{motion_blur_kernel, texture};

fn show(name: &str, h: &NllHistogram) {
    let peak = h.counts.iter().copied().max().unwrap_or(1).max(1);
    println!("{name}: mean nll {:.3}", h.mean);
    for (k, &c) in h.counts.iter().enumerate() {
        println!("  {:>8.1} {}", h.edges[k], "#".repeat(c * 50 / peak));
    }
}

fn main() -> patchnr::Result<()> {
    let example = texture(96, 96, 1);
    let test = texture(96, 96, 9);
    let geom = PatchGeometry::square(test.dim(), 6)?;
    let train = extract_patches(&example, &geom, &geom.all_indices())?;
    let arch = FlowArch::patch(36).with_hidden(64).with_seed(3);
    let (flow, _) = train_flow(train.view(), arch, &TrainConfig { learning_rate: 1e-3, batch_size: 32, steps: 4000, seed: 4 })?;

    // The degraded test image is the deblurring observation.
    let op = Convolution::new(motion_blur_kernel(13, 0.0, 0), test.dim())?;
    let degraded = simulate_observation(&op, &test, NoiseModel::Gaussian { sigma: 5.0 / 255.0 }, 8)?;

    let idx: Vec<usize> = (0..geom.num_patches()).step_by(7).collect();
    let clean = nll_histogram(&flow, extract_patches(&test, &geom, &idx)?.view(), 20)?;
    let blurred = nll_histogram(&flow, extract_patches(&degraded, &geom, &idx)?.view(), 20)?;
    show("clean", &clean);
    show("blurred", &blurred);
    let (diff, t) = separation(&clean.values, &blurred.values)?;
    println!("mean difference {diff:.3}, welch t {t:.2}");

    let fit = gmm_fit(train.view(), 20, &EmConfig { max_iters: 50, seed: 1, ..EmConfig::default() })?;
    let test_patches = extract_patches(&test, &geom, &idx)?;
    let gmm_nll = fit.gmm.logpdf_batch(test_patches.view())?.mapv(|v| -v);
    let gap = (&gmm_nll - &clean.values.iter().copied().collect::<ndarray::Array1<f64>>()).mapv(f64::abs);
    println!("flow vs gmm on clean test patches: means {:.3} / {:.3}, mean |difference| {:.3}", clean.mean, gmm_nll.mean().unwrap_or(f64::NAN), gap.mean().unwrap_or(f64::NAN));
    Ok(())
}
