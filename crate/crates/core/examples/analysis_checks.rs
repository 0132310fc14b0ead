//! Numerical checks of the densities a patch flow induces: the patch
//! marginal formula, the Gaussian sandwich for bi-Lipschitz flows and the
//! tail decay of exp(-rho * patchNR).
//!
//!     cargo run --release --example analysis_checks -- [scale_down]

use patchnr::analysis::{identity_decay, lemma2_check, prop1_tail_check, validation_suite, Prop1Config};
use patchnr::flow::PatchFlow;
use patchnr::patchops::PatchGeometry;

fn main() -> patchnr::Result<()> {
    let scale_down = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);

    for row in validation_suite(scale_down, 1)? {
        println!("{:<46} {:>12.4e}  {:<26} {}", row.name, row.value, row.bound, if row.pass { "PASS" } else { "FAIL" });
    }

    // A single sandwich check, spelled out.
    let flow = PatchFlow::diagonal_affine(&[0.5, 2.0, 1.5, 1.0], &[0.0, 1.0, -1.0, 0.5])?;
    let rep = lemma2_check(&flow, 1000, 2)?;
    println!("\nsandwich on T(z) = diag(0.5, 2, 1.5, 1) z + b: min slack {:.3e}, {} violations", rep.min_slack, rep.violations);

    let geom = PatchGeometry::new(2, 2, 1, 2)?;
    let cfg = Prop1Config::default();
    let rep = prop1_tail_check(&PatchFlow::identity(2)?, &geom, &cfg)?;
    println!("identity flow on a 2x2 image:");
    for (r, v) in &rep.table {
        println!("  radius {r:>4.1}: max log phi {v:>10.3}");
    }
    println!("  fitted slope {:.5}, closed form {:.5}", rep.slope, identity_decay(&geom, cfg.rho));
    Ok(())
}
