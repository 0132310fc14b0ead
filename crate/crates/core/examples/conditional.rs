//! Conditional patchNR for super-resolution: the flow models clean patches
//! given the matching patch of the bicubic upsampling of the observation.
//!
//!     cargo run --release --example conditional

use patchnr::fidelity::Fidelity;
use patchnr::flow::{train_cflow, train_flow, FlowArch, TrainConfig};
use patchnr::metrics::{evaluate, RangeMode};
use patchnr::operators::{simulate_observation, BlurDownsample, LinearOperator, NoiseModel};
use patchnr::patchops::{extract_patches, PatchGeometry};
use patchnr::priors::{CPatchNr, PatchNr, PatchPrior};
use patchnr::solver::{reconstruct, ReconstructConfig, SubsetPolicy};
use patchnr::synth::texture;

fn main() -> patchnr::Result<()> {
    let noise = NoiseModel::Gaussian { sigma: 0.01 };
    let example = texture(96, 96, 1);
    let truth = texture(96, 96, 2);
    let op = BlurDownsample::standard(truth.dim())?;
    let geom = PatchGeometry::square(truth.dim(), 6)?;
    let all = geom.all_indices();

    // Training pairs from a simulated observation of the example image.
    let y_example = simulate_observation(&op, &example, noise, 1)?;
    let cond_example = op.naive_inverse(&y_example)?;
    let clean = extract_patches(&example, &geom, &all)?;
    let cond = extract_patches(&cond_example, &geom, &all)?;
    let train = TrainConfig { learning_rate: 1e-3, batch_size: 32, steps: 4000, seed: 4 };
    let (cflow, _) = train_cflow(clean.view(), cond.view(), FlowArch::patch(36).with_hidden(64).with_seed(3), &train)?;
    let (flow, _) = train_flow(clean.view(), FlowArch::patch(36).with_hidden(64).with_seed(3), &train)?;

    let y = simulate_observation(&op, &truth, noise, 5)?;
    let cond_image = op.naive_inverse(&y)?;
    let held_clean = extract_patches(&truth, &geom, &all)?;
    let held_cond = extract_patches(&cond_image, &geom, &all)?;
    let c = cflow.cnll_batch(held_cond.view(), held_clean.view())?.mean().unwrap_or(f64::NAN);
    let u = flow.nll_batch(held_clean.view())?.mean().unwrap_or(f64::NAN);
    println!("held-out mean nll: conditional {c:.3}, unconditional {u:.3}");

    let m = evaluate(&cond_image, &truth, 8, RangeMode::Unit)?;
    println!("bicubic  psnr {:6.2}  ssim {:.4}", m.psnr, m.ssim);
    let cprior = CPatchNr::new(&cflow, &cond_image, geom.clone())?;
    let prior = PatchNr::new(&flow, geom)?;
    for (name, p) in [("patchnr", &prior as &dyn PatchPrior), ("cpatchnr", &cprior)] {
        let config = ReconstructConfig::new(300, 0.01, 0.01, SubsetPolicy::Random(1000), 6);
        let rec = reconstruct(&y, &op, &Fidelity::gaussian(), Some(p), &config)?;
        let m = evaluate(&rec.image, &truth, 8, RangeMode::Unit)?;
        println!("{name:<8} psnr {:6.2}  ssim {:.4}", m.psnr, m.ssim);
    }
    Ok(())
}
