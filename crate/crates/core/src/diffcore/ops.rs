//! Primitive array operations and their vector-Jacobian products.
//!
//! Batched operands are matrices with one sample per row. Each `*_backward`
//! takes the upstream gradient and returns the gradient with respect to the
//! primitive's input(s).

use std::f64::consts::FRAC_2_PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

/// `x W^T + b` for `W` of shape (out, in).
pub fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Backward of [`affine`]. Accumulates into `gw`, `gb` when given and
/// returns the input gradient when `want_input` is set.
pub fn affine_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    gy: ArrayView2<f64>,
    gw: Option<ArrayViewMut2<f64>>,
    gb: Option<ArrayViewMut1<f64>>,
    want_input: bool,
) -> Option<Array2<f64>> {
    if let Some(mut gw) = gw {
        ndarray::linalg::general_mat_mul(1.0, &gy.t(), &x, 1.0, &mut gw);
    }
    if let Some(mut gb) = gb {
        for row in gy.rows() {
            gb += &row;
        }
    }
    want_input.then(|| gy.dot(&w))
}

pub fn relu(x: ArrayView2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient at 0 is 0.
pub fn relu_backward(pre: ArrayView2<f64>, gy: ArrayView2<f64>) -> Array2<f64> {
    let mut g = gy.to_owned();
    Zip::from(&mut g).and(&pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

pub fn tanh(x: ArrayView2<f64>) -> Array2<f64> {
    x.mapv(f64::tanh)
}

/// Uses the forward output `y = tanh(x)`.
pub fn tanh_backward(y: ArrayView2<f64>, gy: ArrayView2<f64>) -> Array2<f64> {
    let mut g = gy.to_owned();
    Zip::from(&mut g).and(&y).for_each(|g, &y| *g *= 1.0 - y * y);
    g
}

pub fn exp(x: ArrayView2<f64>) -> Array2<f64> {
    x.mapv(f64::exp)
}

/// Uses the forward output `y = exp(x)`.
pub fn exp_backward(y: ArrayView2<f64>, gy: ArrayView2<f64>) -> Array2<f64> {
    &gy * &y
}

/// Smooth bound `clamp * (2/pi) * atan(x / clamp)`; output lies in (-clamp, clamp).
pub fn soft_clamp(x: ArrayView2<f64>, clamp: f64) -> Array2<f64> {
    x.mapv(|v| soft_clamp_scalar(v, clamp))
}

#[inline]
pub fn soft_clamp_scalar(v: f64, clamp: f64) -> f64 {
    clamp * FRAC_2_PI * (v / clamp).atan()
}

/// Inverse of [`soft_clamp_scalar`] for |v| < clamp.
pub fn soft_clamp_inverse(v: f64, clamp: f64) -> f64 {
    clamp * (v / (clamp * FRAC_2_PI)).tan()
}

#[inline]
pub fn soft_clamp_derivative(v: f64, clamp: f64) -> f64 {
    let r = v / clamp;
    FRAC_2_PI / (1.0 + r * r)
}

pub fn soft_clamp_backward(pre: ArrayView2<f64>, gy: ArrayView2<f64>, clamp: f64) -> Array2<f64> {
    let mut g = gy.to_owned();
    Zip::from(&mut g)
        .and(&pre)
        .for_each(|g, &p| *g *= soft_clamp_derivative(p, clamp));
    g
}

/// Per-row sums.
pub fn row_sum(x: ArrayView2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(1))
}

/// Broadcasts the per-row upstream gradient back over the columns.
pub fn row_sum_backward(gy: ArrayView1<f64>, cols: usize) -> Array2<f64> {
    let mut g = Array2::zeros((gy.len(), cols));
    for (mut row, &v) in g.rows_mut().into_iter().zip(gy.iter()) {
        row.fill(v);
    }
    g
}

/// Sum of all entries, left to right in row-major order.
pub fn sum(x: ArrayView2<f64>) -> f64 {
    x.iter().fold(0.0, |acc, v| acc + v)
}

/// Same-size 2-D convolution with zero padding.
///
/// Kernel anchor is `(kh / 2, kw / 2)`:
/// `y[i, j] = sum_{u,v} k[u, v] * x[i + kh/2 - u, j + kw/2 - v]`.
pub fn conv2d_same(x: ArrayView2<f64>, k: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let (kh, kw) = k.dim();
    let (ah, aw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut y = Array2::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for u in 0..kh as isize {
                let si = i + ah - u;
                if si < 0 || si >= h as isize {
                    continue;
                }
                for v in 0..kw as isize {
                    let sj = j + aw - v;
                    if sj < 0 || sj >= w as isize {
                        continue;
                    }
                    acc += k[[u as usize, v as usize]] * x[[si as usize, sj as usize]];
                }
            }
            y[[i as usize, j as usize]] = acc;
        }
    }
    y
}

/// Adjoint of [`conv2d_same`] (correlation with the same kernel).
pub fn conv2d_same_backward(gy: ArrayView2<f64>, k: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = gy.dim();
    let (kh, kw) = k.dim();
    let (ah, aw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut gx = Array2::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let g = gy[[i as usize, j as usize]];
            if g == 0.0 {
                continue;
            }
            for u in 0..kh as isize {
                let si = i + ah - u;
                if si < 0 || si >= h as isize {
                    continue;
                }
                for v in 0..kw as isize {
                    let sj = j + aw - v;
                    if sj < 0 || sj >= w as isize {
                        continue;
                    }
                    gx[[si as usize, sj as usize]] += k[[u as usize, v as usize]] * g;
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, ValueGrid};
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const POINTS: usize = 100;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
        Array::from_shape_fn((r, c), |_| rng.random_range(-scale..scale))
    }

    /// Scalar test objective: weighted sum of a primitive's output, so every
    /// output entry gets a distinct upstream gradient.
    fn check_unary(
        forward: impl Fn(ArrayView2<f64>) -> Array2<f64>,
        backward: impl Fn(ArrayView2<f64>, ArrayView2<f64>, ArrayView2<f64>) -> Array2<f64>,
        sample: impl Fn(&mut ChaCha8Rng) -> Array2<f64>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..POINTS {
            let x = sample(&mut rng);
            let out_dim = forward(x.view()).dim();
            let weights = random_matrix(&mut rng, out_dim.0, out_dim.1, 1.0);
            let shape = x.dim();
            let point = ValueGrid::from_array2(&x).unwrap();
            let r = grad_check(
                |g| {
                    let x = g.to_array2().unwrap();
                    let y = forward(x.view());
                    let v = (&y * &weights).sum();
                    let gx = backward(x.view(), y.view(), weights.view());
                    assert_eq!(gx.dim(), shape);
                    Ok((v, ValueGrid::from_array2(&gx).unwrap()))
                },
                &point,
                1e-5,
            )
            .unwrap();
            worst = worst.max(r.max_rel_error);
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }

    #[test]
    fn affine_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..POINTS {
            let x = random_matrix(&mut rng, 3, 4, 1.0);
            let w = random_matrix(&mut rng, 5, 4, 1.0);
            let b = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
            let gy = random_matrix(&mut rng, 3, 5, 1.0);

            // input
            let r = grad_check(
                |g| {
                    let x = g.to_array2().unwrap();
                    let v = (&affine(x.view(), w.view(), b.view()) * &gy).sum();
                    let gx = affine_backward(x.view(), w.view(), gy.view(), None, None, true).unwrap();
                    Ok((v, ValueGrid::from_array2(&gx).unwrap()))
                },
                &ValueGrid::from_array2(&x).unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-6, "{r:?}");

            // weights
            let r = grad_check(
                |g| {
                    let w = g.to_array2().unwrap();
                    let v = (&affine(x.view(), w.view(), b.view()) * &gy).sum();
                    let mut gw = Array2::zeros(w.dim());
                    affine_backward(x.view(), w.view(), gy.view(), Some(gw.view_mut()), None, false);
                    Ok((v, ValueGrid::from_array2(&gw).unwrap()))
                },
                &ValueGrid::from_array2(&w).unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-6, "{r:?}");

            // bias
            let r = grad_check(
                |g| {
                    let b = Array1::from(g.data().to_vec());
                    let v = (&affine(x.view(), w.view(), b.view()) * &gy).sum();
                    let mut gb = Array1::zeros(5);
                    affine_backward(x.view(), w.view(), gy.view(), None, Some(gb.view_mut()), false);
                    Ok((v, ValueGrid::from_vec(gb.to_vec()).unwrap()))
                },
                &ValueGrid::from_vec(b.to_vec()).unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        check_unary(
            relu,
            |x, _, gy| relu_backward(x, gy),
            |rng| {
                // keep entries away from 0 so central differences do not straddle the kink
                Array::from_shape_fn((4, 3), |_| {
                    let v: f64 = rng.random_range(0.01..2.0);
                    if rng.random_bool(0.5) { v } else { -v }
                })
            },
        );
    }

    #[test]
    fn relu_sum_at_positive_point_is_ones() {
        let x = Array2::from_elem((2, 3), 0.5);
        let g = relu_backward(x.view(), Array2::ones((2, 3)).view());
        assert!(g.iter().all(|&v| v == 1.0));
        let at_zero = relu_backward(Array2::zeros((1, 1)).view(), Array2::ones((1, 1)).view());
        assert_eq!(at_zero[[0, 0]], 0.0);
    }

    #[test]
    fn tanh_exp_clamp_gradients() {
        let sample = |rng: &mut ChaCha8Rng| random_matrix(rng, 3, 3, 2.0);
        check_unary(tanh, |_, y, gy| tanh_backward(y, gy), sample);
        check_unary(exp, |_, y, gy| exp_backward(y, gy), sample);
        check_unary(
            |x| soft_clamp(x, 1.9),
            |x, _, gy| soft_clamp_backward(x, gy, 1.9),
            |rng| random_matrix(rng, 3, 3, 10.0),
        );
    }

    #[test]
    fn row_sum_gradient() {
        check_unary(
            |x| row_sum(x).insert_axis(Axis(1)),
            |x, _, gy| row_sum_backward(gy.column(0), x.ncols()),
            |rng| random_matrix(rng, 4, 5, 1.0),
        );
    }

    #[test]
    fn conv_gradient_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = random_matrix(&mut rng, 3, 4, 1.0);
        check_unary(
            |x| conv2d_same(x, k.view()),
            |_, _, gy| conv2d_same_backward(gy, k.view()),
            |rng| random_matrix(rng, 5, 6, 1.0),
        );
    }

    #[test]
    fn composed_affine_tanh_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = random_matrix(&mut rng, 6, 4, 1.0);
        let b = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let x = random_matrix(&mut rng, 2, 4, 1.0);
        let r = grad_check(
            |g| {
                let x = g.to_array2().unwrap();
                let pre = affine(x.view(), w.view(), b.view());
                let y = tanh(pre.view());
                let v = sum(y.view());
                let gpre = tanh_backward(y.view(), Array2::ones(y.dim()).view());
                let gx = affine_backward(x.view(), w.view(), gpre.view(), None, None, true).unwrap();
                Ok((v, ValueGrid::from_array2(&gx).unwrap()))
            },
            &ValueGrid::from_array2(&x).unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn soft_clamp_bounded_and_invertible() {
        for v in [-1e6, -3.0, -0.2, 0.0, 0.7, 40.0, 1e9] {
            let c = soft_clamp_scalar(v, 1.9);
            assert!(c.abs() < 1.9);
        }
        let v = 0.37;
        assert!((soft_clamp_inverse(soft_clamp_scalar(v, 1.9), 1.9) - v).abs() < 1e-12);
    }
}
