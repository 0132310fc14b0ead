//! Image quality metrics on a texture and progressively blurred copies.
//!
//!     cargo run --release --example metrics

use patchnr::metrics::{blur_effect, evaluate, psnr, ssim, RangeMode};
use patchnr::operators::{gaussian_kernel, Convolution, LinearOperator};
use patchnr::synth::{shepp_logan, texture};

fn main() -> patchnr::Result<()> {
    let x = texture(96, 96, 2);
    println!("{:>6} {:>8} {:>8} {:>8}", "sigma", "psnr", "ssim", "blur");
    for sigma in [0.5, 1.0, 2.0, 4.0] {
        let op = Convolution::new(gaussian_kernel(15, sigma), x.dim())?;
        let b = op.apply(&x)?;
        let m = evaluate(&b, &x, 8, RangeMode::Unit)?;
        println!("{sigma:>6.1} {:>8.3} {:>8.4} {:>8.4}", m.psnr, m.ssim, m.blur_effect);
    }
    println!("sharp blur effect {:.4}", blur_effect(&x));

    // Adaptive PSNR uses the reference's own range, as for CT images.
    let phantom = shepp_logan(64).mapv(|v| 0.4 * v);
    let shifted = phantom.mapv(|v| v + 0.1);
    println!(
        "phantom +0.1: unit psnr {:.3}, adaptive psnr {:.3}, ssim {:.4}",
        psnr(&shifted, &phantom, RangeMode::Unit)?,
        psnr(&shifted, &phantom, RangeMode::Adaptive)?,
        ssim(&shifted, &phantom)?
    );
    Ok(())
}
