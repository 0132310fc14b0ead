use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::diffcore::{grad_check, ValueGrid};

fn random_flow(dim: usize, hidden: usize, seed: u64) -> PatchFlow {
    let mut f = PatchFlow::new(FlowArch::patch(dim).with_hidden(hidden).with_seed(seed)).unwrap();
    f.perturb(seed + 100, 0.05);
    f
}

fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(&mut rng))
}

/// log|det J| of `map` at `x` from a central-difference Jacobian.
fn numeric_logdet(map: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> f64 {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + h;
        let fp = map(&probe);
        probe[j] = x[j] - h;
        let fm = map(&probe);
        probe[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

#[test]
fn zero_subnets_give_permutation() {
    let flow = PatchFlow::new(FlowArch::patch(6).with_hidden(8).with_blocks(3).with_seed(4)).unwrap();
    let z = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
    let (p, ld) = flow.forward_map(&z).unwrap();
    let mut expected = z.to_vec();
    for perm in flow.permutations() {
        expected = perm.iter().map(|&j| expected[j]).collect();
    }
    assert_eq!(p, expected);
    assert_eq!(ld, 0.0);
    let (back, ld_inv) = flow.inverse_map(&p).unwrap();
    assert_eq!(back, z.to_vec());
    assert_eq!(ld_inv, 0.0);
}

#[test]
fn identity_flow_fixes_origin() {
    let flow = PatchFlow::identity(36).unwrap();
    let (p, ld) = flow.forward_map(&[0.0; 36]).unwrap();
    assert!(p.iter().all(|&v| v == 0.0));
    assert_eq!(ld, 0.0);
}

#[test]
fn logdet_matches_numerical_jacobian() {
    let flow = random_flow(8, 16, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (_, ld) = flow.forward_map(&z).unwrap();
        let numeric = numeric_logdet(|x| flow.forward_map(x).unwrap().0, &z, 1e-5);
        assert!((ld - numeric).abs() < 1e-4, "{ld} vs {numeric}");
    }
}

#[test]
fn round_trip_and_logdet_consistency() {
    let mut worst_x: f64 = 0.0;
    let mut worst_ld: f64 = 0.0;
    for seed in 0..10 {
        let flow = random_flow(6, 32, seed);
        let z = gaussian_rows(100, 6, seed + 7);
        let (p, ld) = flow.forward_batch(z.view()).unwrap();
        let (back, ld_inv) = flow.inverse_batch(p.view()).unwrap();
        worst_x = worst_x.max((&back - &z).iter().fold(0.0, |a, v| a.max(v.abs())));
        worst_ld = worst_ld.max((&ld + &ld_inv).iter().fold(0.0, |a, v| a.max(v.abs())));
    }
    assert!(worst_x < 1e-6, "{worst_x}");
    assert!(worst_ld < 1e-6, "{worst_ld}");
}

#[test]
fn dimension_mismatch_rejected() {
    let flow = PatchFlow::identity(4).unwrap();
    assert!(flow.forward_map(&[0.0; 3]).is_err());
    assert!(flow.inverse_map(&[0.0; 5]).is_err());
    assert!(flow.nll(&[0.0; 2]).is_err());
}

#[test]
fn odd_dimension_rejected() {
    assert!(PatchFlow::new(FlowArch::patch(5)).is_err());
}

#[test]
fn identity_nll_is_gaussian() {
    let flow = PatchFlow::identity(36).unwrap();
    let v = flow.nll(&[0.0; 36]).unwrap();
    assert!((v - 18.0 * (2.0 * PI).ln()).abs() < 1e-12);
    assert!((v - 33.0818).abs() < 1e-4);
    let p: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
    let sq: f64 = p.iter().map(|x| x * x).sum();
    assert!((flow.nll(&p).unwrap() - (0.5 * sq + gaussian_constant(36))).abs() < 1e-12);
}

#[test]
fn affine_nll_matches_gaussian_density() {
    let a = 1.7;
    let b = [0.3, -0.4, 1.1, 0.0];
    let flow = PatchFlow::diagonal_affine(&[a; 4], &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let p: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sq: f64 = p.iter().zip(&b).map(|(x, m)| (x - m) * (x - m)).sum();
        let exact = 0.5 * sq / (a * a) + 4.0 * a.ln() + 2.0 * (2.0 * PI).ln();
        assert!((flow.nll(&p).unwrap() - exact).abs() < 1e-8);
    }
}

#[test]
fn sampling_statistics_and_determinism() {
    let n = 100_000;
    let identity = PatchFlow::identity(4).unwrap();
    let s = identity.sample(n, 1).unwrap();
    let mean = s.mean_axis(ndarray::Axis(0)).unwrap();
    assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean}");

    let b = [1.0, -2.0, 0.5, 3.0];
    let affine = PatchFlow::diagonal_affine(&[2.0; 4], &b).unwrap();
    let s = affine.sample(n, 2).unwrap();
    let mean = s.mean_axis(ndarray::Axis(0)).unwrap();
    for (m, t) in mean.iter().zip(&b) {
        assert!((m - t).abs() < 0.05, "{mean}");
    }

    let flow = random_flow(4, 8, 3);
    let a = flow.sample(50, 11).unwrap();
    let c = flow.sample(50, 11).unwrap();
    assert!(a.iter().zip(c.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(flow.sample(0, 1).is_err());
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let flow = random_flow(4, 16, 5);
    let batch = gaussian_rows(6, 4, 3);
    let point = ValueGrid::from_vec(flow.params().flatten()).unwrap();
    let weight = 1.0 / batch.nrows() as f64;
    let r = grad_check(
        |theta| {
            let mut f = flow.clone();
            f.params_mut().assign_flat(theta.data())?;
            let mut grads = f.params().zeros_like();
            let nll = f.nll_param_grad(batch.view(), weight, &mut grads)?;
            Ok((nll.sum() * weight, ValueGrid::from_vec(grads.flatten())?))
        },
        &point,
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let flow = random_flow(6, 16, 6);
    let batch = gaussian_rows(3, 6, 4);
    let r = grad_check(
        |p| {
            let rows = p.to_array2()?;
            let (nll, g) = flow.nll_input_grad(rows.view(), 0.5)?;
            Ok((0.5 * nll.sum(), ValueGrid::from_array2(&g)?))
        },
        &ValueGrid::from_array2(&batch).unwrap(),
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn lipschitz_certificate_for_affine_only() {
    let affine = PatchFlow::diagonal_affine(&[0.5, 2.0, 1.0, 3.0], &[0.0; 4]).unwrap();
    let lip = affine.lipschitz_certificate().unwrap();
    assert!((lip.k - 3.0).abs() < 1e-12 && (lip.l - 2.0).abs() < 1e-12);
    assert!(random_flow(4, 8, 1).lipschitz_certificate().is_none());
    let untrained = PatchFlow::new(FlowArch::patch(4).with_hidden(8)).unwrap();
    assert_eq!(untrained.lipschitz_certificate(), Some(Lipschitz { k: 1.0, l: 1.0 }));
}

#[test]
fn trains_to_gaussian_entropy() {
    let dim = 4;
    let mu = [0.5, -0.3, 0.2, 0.8];
    let std = 0.1f64.sqrt();
    let make = |n, seed| {
        let z = gaussian_rows(n, dim, seed);
        Array2::from_shape_fn((n, dim), |(i, j)| mu[j] + std * z[[i, j]])
    };
    let train = make(20_000, 1);
    let held_out = make(5_000, 2);
    let arch = FlowArch::patch(dim).with_hidden(32).with_blocks(2).with_seed(3);
    let config = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 64,
        steps: 3000,
        seed: 4,
    };
    let initial = PatchFlow::new(arch).unwrap().nll_batch(held_out.view()).unwrap().mean().unwrap();
    let (flow, report) = train_flow(train.view(), arch, &config).unwrap();
    assert_eq!(report.loss_trace.len(), 3000);
    let nll = flow.nll_batch(held_out.view()).unwrap().mean().unwrap();
    let entropy = 0.5 * dim as f64 * (2.0 * PI * std::f64::consts::E * 0.1).ln();
    assert!(nll < initial);
    assert!((nll - entropy).abs() < 0.1, "nll {nll} vs entropy {entropy}");
}

#[test]
fn training_rejects_small_sets() {
    let patches = Array2::zeros((4, 2));
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        steps: 1,
        seed: 0,
    };
    assert!(train_flow(patches.view(), FlowArch::patch(2).with_hidden(4), &cfg).is_err());
}

#[test]
fn conditional_zero_subnets_and_round_trip() {
    let arch = FlowArch::patch(4).with_hidden(8).with_cond_dim(3);
    let flow = ConditionalPatchFlow::new(arch).unwrap();
    let v = flow.cnll(&[0.3, 1.0, -2.0], &[0.0; 4]).unwrap();
    assert!((v - gaussian_constant(4)).abs() < 1e-12);

    let mut flow = flow;
    flow.perturb(2, 0.1);
    let c = [0.5, -0.1, 0.9];
    let p = [0.2, 0.3, -0.7, 1.2];
    let (z, ld_inv) = flow.inverse_map(&c, &p).unwrap();
    let (back, ld) = flow.forward_map(&c, &z).unwrap();
    for (a, b) in back.iter().zip(&p) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!((ld + ld_inv).abs() < 1e-6);
}

/// Builds a one-block conditional flow with `T(c; z) = a z + c`
/// (shifts routed from the condition through ReLU pairs `c = relu(c) - relu(-c)`).
fn condition_shift_flow(a: f64) -> ConditionalPatchFlow {
    let dim = 4;
    let half = 2;
    let arch = FlowArch::patch(dim).with_hidden(8).with_blocks(1).with_cond_dim(dim);
    let mut flow = ConditionalPatchFlow::from_parts(
        arch,
        vec![(0..dim).collect()],
        &vec![0.0; ConditionalPatchFlow::new(arch).unwrap().params().numel()],
    )
    .unwrap();
    let raw = crate::diffcore::ops::soft_clamp_inverse(a.ln(), arch.clamp);
    // "first" shifts coordinates 2..4 using c[2..4]; "second" shifts 0..2 using c[0..2]
    for (net, offset) in [("first", half), ("second", 0)] {
        let params = flow.params_mut();
        let w1 = params.index_of(&format!("block0.{net}.fc1.weight")).unwrap();
        {
            let w = params.get_mut(w1).data_mut();
            let cols = half + dim;
            for j in 0..half {
                w[(2 * j) * cols + half + offset + j] = 1.0;
                w[(2 * j + 1) * cols + half + offset + j] = -1.0;
            }
        }
        let w2 = params.index_of(&format!("block0.{net}.fc2.weight")).unwrap();
        {
            let w = params.get_mut(w2).data_mut();
            for j in 0..8 {
                w[j * 8 + j] = 1.0;
            }
        }
        let w3 = params.index_of(&format!("block0.{net}.fc3.weight")).unwrap();
        {
            let w = params.get_mut(w3).data_mut();
            for j in 0..half {
                w[(half + j) * 8 + 2 * j] = 1.0;
                w[(half + j) * 8 + 2 * j + 1] = -1.0;
            }
        }
        let b3 = params.index_of(&format!("block0.{net}.fc3.bias")).unwrap();
        for j in 0..half {
            params.get_mut(b3).data_mut()[j] = raw;
        }
    }
    flow
}

#[test]
fn condition_dependent_affine_matches_closed_form() {
    let a = 0.6;
    let flow = condition_shift_flow(a);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sq: f64 = p.iter().zip(&c).map(|(x, m)| (x - m) * (x - m)).sum();
        let exact = 0.5 * sq / (a * a) + 4.0 * a.ln() + 2.0 * (2.0 * PI).ln();
        let got = flow.cnll(&c, &p).unwrap();
        assert!((got - exact).abs() < 1e-8, "{got} vs {exact}");
    }
}

#[test]
fn conditional_parameter_gradient() {
    let mut flow = ConditionalPatchFlow::new(FlowArch::patch(4).with_hidden(8).with_cond_dim(2).with_blocks(2)).unwrap();
    flow.perturb(1, 0.05);
    let p = gaussian_rows(5, 4, 1);
    let c = gaussian_rows(5, 2, 2);
    let r = grad_check(
        |theta| {
            let mut f = flow.clone();
            f.params_mut().assign_flat(theta.data())?;
            let mut g = f.params().zeros_like();
            let nll = f.cnll_param_grad(c.view(), p.view(), 0.2, &mut g)?;
            Ok((0.2 * nll.sum(), ValueGrid::from_vec(g.flatten())?))
        },
        &ValueGrid::from_vec(flow.params().flatten()).unwrap(),
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn conditional_training_uses_condition() {
    let n = 8000;
    let dim = 2;
    let c = gaussian_rows(n, dim, 10);
    let eps = gaussian_rows(n, dim, 11);
    let p = &c + &(eps * 0.1);
    let ch = gaussian_rows(1000, dim, 12);
    let ph = &ch + &(gaussian_rows(1000, dim, 13) * 0.1);
    let config = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 64,
        steps: 1500,
        seed: 1,
    };
    let arch = FlowArch::patch(dim).with_hidden(32).with_blocks(3).with_seed(2);
    let (cflow, r1) = train_cflow(p.view(), c.view(), arch, &config).unwrap();
    let (uflow, _) = train_flow(p.view(), arch, &config).unwrap();
    let cond_nll = cflow.cnll_batch(ch.view(), ph.view()).unwrap().mean().unwrap();
    let uncond_nll = uflow.nll_batch(ph.view()).unwrap().mean().unwrap();
    assert!(cond_nll < uncond_nll - 1.0, "conditional {cond_nll} vs unconditional {uncond_nll}");

    let (_, r2) = train_cflow(p.view(), c.view(), arch, &config).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn constant_condition_behaves_unconditionally() {
    let n = 6000;
    let dim = 2;
    let z = gaussian_rows(n, dim, 20);
    let p = Array2::from_shape_fn((n, dim), |(i, j)| if j == 0 { z[[i, 0]] } else { 0.5 * z[[i, 0]] + 0.3 * z[[i, 1]] });
    let zz = gaussian_rows(1000, dim, 21);
    let held = Array2::from_shape_fn((1000, dim), |(i, j)| if j == 0 { zz[[i, 0]] } else { 0.5 * zz[[i, 0]] + 0.3 * zz[[i, 1]] });
    let cond = Array2::from_elem((n, 2), 0.7);
    let cond_held = Array2::from_elem((1000, 2), 0.7);
    let config = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 64,
        steps: 1500,
        seed: 3,
    };
    let arch = FlowArch::patch(dim).with_hidden(32).with_blocks(3).with_seed(4);
    let (cflow, _) = train_cflow(p.view(), cond.view(), arch, &config).unwrap();
    let (uflow, _) = train_flow(p.view(), arch, &config).unwrap();
    let a = cflow.cnll_batch(cond_held.view(), held.view()).unwrap().mean().unwrap();
    let b = uflow.nll_batch(held.view()).unwrap().mean().unwrap();
    assert!((a - b).abs() < 0.2, "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn invertible_with_bounded_logdet(seed in 0u64..1000, scale in 0.0f64..0.5, z in prop::collection::vec(-4.0f64..4.0, 6)) {
        let mut flow = PatchFlow::new(FlowArch::patch(6).with_hidden(8).with_blocks(2).with_seed(seed)).unwrap();
        flow.perturb(seed, scale);
        let (p, ld) = flow.forward_map(&z).unwrap();
        let (back, ld_inv) = flow.inverse_map(&p).unwrap();
        let bound = 2.0 * 6.0 / 2.0 * flow.arch().clamp;
        prop_assert!(ld.abs() <= bound);
        prop_assert!((ld + ld_inv).abs() < 1e-8);
        for (a, b) in back.iter().zip(&z) {
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }
}
