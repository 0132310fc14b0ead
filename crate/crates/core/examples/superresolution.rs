//! Desk-scale super-resolution: a 96x96 texture observed through a 16x16
//! Gaussian blur with stride 4 plus noise, reconstructed with bicubic
//! upsampling, unregularized least squares and patchNR.
//!
//!     cargo run --release --example superresolution

use patchnr::fidelity::Fidelity;
use patchnr::flow::{train_flow, FlowArch, TrainConfig};
use patchnr::io::write_pfm;
use patchnr::metrics::{evaluate, RangeMode};
use patchnr::operators::{simulate_observation, BlurDownsample, LinearOperator, NoiseModel};
use patchnr::patchops::{extract_patches, PatchGeometry};
use patchnr::priors::PatchNr;
use patchnr::solver::{reconstruct, ReconstructConfig, SubsetPolicy};
use patchnr::synth::texture;
use patchnr::Image;

const CROP: usize = 8;

fn main() -> patchnr::Result<()> {
    let example = texture(96, 96, 1);
    let truth = texture(96, 96, 2);
    let geom = PatchGeometry::square(truth.dim(), 6)?;

    let patches = extract_patches(&example, &geom, &geom.all_indices())?;
    let arch = FlowArch::patch(36).with_hidden(64).with_seed(3);
    let (flow, _) = train_flow(patches.view(), arch, &TrainConfig { learning_rate: 1e-3, batch_size: 32, steps: 5000, seed: 4 })?;

    let op = BlurDownsample::standard(truth.dim())?;
    let y = simulate_observation(&op, &truth, NoiseModel::Gaussian { sigma: 0.01 }, 5)?;

    let report = |name: &str, x: &Image| -> patchnr::Result<()> {
        let m = evaluate(x, &truth, CROP, RangeMode::Unit)?;
        println!("{name:<14} psnr {:6.2}  ssim {:.4}  blur {:.3}", m.psnr, m.ssim, m.blur_effect);
        write_pfm(x, format!("sr_{name}.pfm").as_ref())
    };
    report("bicubic", &op.naive_inverse(&y)?)?;

    let config = ReconstructConfig::new(300, 0.01, 0.0, SubsetPolicy::Full, 6);
    let ls = reconstruct(&y, &op, &Fidelity::gaussian(), None, &config)?;
    report("least_squares", &ls.image)?;

    let prior = PatchNr::new(&flow, geom)?;
    let config = ReconstructConfig::new(300, 0.01, 0.01, SubsetPolicy::Random(1000), 6);
    let rec = reconstruct(&y, &op, &Fidelity::gaussian(), Some(&prior), &config)?;
    report("patchnr", &rec.image)?;
    report("truth", &truth)
}
