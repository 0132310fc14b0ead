//! Train a patch flow on one synthetic texture, check invertibility and
//! save it as a checkpoint.
//!
//!     cargo run --release --example train_flow -- [steps] [out.pnrk]

use patchnr::flow::{train_flow, FlowArch, TrainConfig};
use patchnr::io::{load_checkpoint, save_checkpoint, Model};
use patchnr::patchops::{extract_patches, PatchGeometry};
use patchnr::synth::texture;

fn main() -> patchnr::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let out = args.next().unwrap_or_else(|| "texture_flow.pnrk".into());

    let image = texture(96, 96, 1);
    let geom = PatchGeometry::square(image.dim(), 6)?;
    let patches = extract_patches(&image, &geom, &geom.all_indices())?;
    println!("{} training patches of dimension {}", patches.nrows(), patches.ncols());

    // Desk-sized subnets; the full setting uses 512 hidden units.
    let arch = FlowArch::patch(36).with_hidden(64).with_seed(3);
    let config = TrainConfig { learning_rate: 1e-3, batch_size: 32, steps, seed: 4 };
    let (flow, report) = train_flow(patches.view(), arch, &config)?;
    for (k, chunk) in report.loss_trace.chunks(steps.div_ceil(10).max(1)).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:>6}: mean loss {mean:>9.3}", (k + 1) * chunk.len());
    }

    let samples = flow.sample(5, 9)?;
    let (z, logdet) = flow.inverse_batch(samples.view())?;
    let (back, logdet_back) = flow.forward_batch(z.view())?;
    let err = (&back - &samples).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ld = (&logdet + &logdet_back).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("round trip error {err:.2e}, log-det mismatch {ld:.2e}");

    let nll = flow.nll_batch(patches.view())?;
    println!("mean training nll {:.3}", nll.mean().unwrap_or(f64::NAN));

    save_checkpoint(&Model::Flow(flow), out.as_ref())?;
    let Model::Flow(reloaded) = load_checkpoint(out.as_ref())? else { unreachable!() };
    assert_eq!(reloaded.nll_batch(patches.view())?, nll);
    println!("checkpoint written to {out}");
    Ok(())
}
