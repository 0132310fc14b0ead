//! EPLL baseline: a Gaussian mixture fitted to example patches by EM, used
//! as the patch prior for deblurring.
//!
//!     cargo run --release --example epll_baseline -- [components]

use patchnr::fidelity::Fidelity;
use patchnr::metrics::{evaluate, RangeMode};
use patchnr::operators::{simulate_observation, Convolution, NoiseModel};
use patchnr::patchops::{extract_patches, PatchGeometry};
use patchnr::priors::{gmm_fit, EmConfig, Epll};
use patchnr::solver::{reconstruct, ReconstructConfig, SubsetPolicy};
use patchnr::synth::{motion_blur_kernel, texture};

fn main() -> patchnr::Result<()> {
    let k = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let example = texture(96, 96, 1);
    let truth = texture(96, 96, 2);
    let geom = PatchGeometry::square(truth.dim(), 6)?;
    let idx: Vec<usize> = (0..geom.num_patches()).step_by(2).collect();
    let patches = extract_patches(&example, &geom, &idx)?;

    let fit = gmm_fit(patches.view(), k, &EmConfig { max_iters: 50, seed: 1, ..EmConfig::default() })?;
    let ll = &fit.log_likelihood;
    println!("EM: {} iterations, mean log-likelihood {:.3} -> {:.3}", ll.len(), ll[0], ll[ll.len() - 1]);
    assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-9), "EM must not decrease the likelihood");

    let op = Convolution::new(motion_blur_kernel(13, 0.4, 7), truth.dim())?;
    let y = simulate_observation(&op, &truth, NoiseModel::Gaussian { sigma: 5.0 / 255.0 }, 8)?;
    let prior = Epll::new(&fit.gmm, geom)?;
    // EPLL is a mean over patches, so lambda is not rescaled by the patch size.
    let config = ReconstructConfig::new(300, 0.005, 0.02, SubsetPolicy::Random(1000), 9);
    let rec = reconstruct(&y, &op, &Fidelity::gaussian(), Some(&prior), &config)?;
    let m = evaluate(&rec.image, &truth, 6, RangeMode::Unit)?;
    println!("epll  psnr {:6.2}  ssim {:.4}  blur {:.3}", m.psnr, m.ssim, m.blur_effect);
    Ok(())
}
