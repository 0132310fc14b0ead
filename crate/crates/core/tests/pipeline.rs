use patchnr::fidelity::Fidelity;
use patchnr::flow::{train_flow, FlowArch, TrainConfig};
use patchnr::io::{load_checkpoint, save_checkpoint, Model};
use patchnr::metrics::{psnr, RangeMode};
use patchnr::operators::{fbp, simulate_observation, BlurDownsample, FbpFilter, NoiseModel, Radon, RadonGeometry};
use patchnr::patchops::{extract_patches, PatchGeometry};
use patchnr::priors::PatchNr;
use patchnr::solver::{reconstruct, ReconstructConfig, SubsetPolicy};
use patchnr::synth::{shepp_logan, texture};

#[test]
fn reloaded_flow_reconstructs_identically() {
    let image = texture(32, 32, 1);
    let geom = PatchGeometry::square((32, 32), 4).unwrap();
    let patches = extract_patches(&image, &geom, &geom.all_indices()).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 16, steps: 100, seed: 2 };
    let (flow, _) = train_flow(patches.view(), FlowArch::patch(16).with_hidden(16).with_seed(1), &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flow.pnrk");
    save_checkpoint(&Model::Flow(flow.clone()), &path).unwrap();
    let Model::Flow(back) = load_checkpoint(&path).unwrap() else { panic!("wrong kind") };

    let probe = patches.slice(ndarray::s![..100, ..]);
    let a = flow.nll_batch(probe).unwrap();
    let b = back.nll_batch(probe).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let op = BlurDownsample::standard((32, 32)).unwrap();
    let y = simulate_observation(&op, &texture(32, 32, 2), NoiseModel::Gaussian { sigma: 0.01 }, 3).unwrap();
    let rc = ReconstructConfig::new(20, 0.01, 0.01, SubsetPolicy::Random(100), 4);
    let run = |f| {
        let prior = PatchNr::new(f, geom.clone()).unwrap();
        reconstruct(&y, &op, &Fidelity::gaussian(), Some(&prior), &rc).unwrap().image
    };
    assert_eq!(run(&flow), run(&back));
}

#[test]
fn patchnr_beats_fbp_on_low_dose_ct() {
    let example = shepp_logan(48);
    let truth = example.t().to_owned();
    let geom = PatchGeometry::square((48, 48), 4).unwrap();
    let patches = extract_patches(&example, &geom, &geom.all_indices()).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 32, steps: 1500, seed: 5 };
    let (flow, _) = train_flow(patches.view(), FlowArch::patch(16).with_hidden(32).with_seed(6), &cfg).unwrap();

    let g = RadonGeometry::parallel(48, 4.0, 69, 60).unwrap();
    let op = Radon::new(g.clone()).unwrap();
    let y = simulate_observation(&op, &truth, NoiseModel::PoissonCt { n0: 4096.0 }, 7).unwrap();
    let base = psnr(&fbp(&g, &y, FbpFilter::Hann, 0.641).unwrap(), &truth, RangeMode::Adaptive).unwrap();
    let prior = PatchNr::new(&flow, geom).unwrap();
    let rc = ReconstructConfig::new(200, 0.005, 100.0, SubsetPolicy::Random(500), 8);
    let rec = reconstruct(&y, &op, &Fidelity::poisson_ct(4096.0), Some(&prior), &rc).unwrap();
    let ours = psnr(&rec.image, &truth, RangeMode::Adaptive).unwrap();
    assert!(ours > base + 3.0, "patchnr {ours:.2} dB vs fbp {base:.2} dB");
}
