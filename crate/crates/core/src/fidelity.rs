//! Data terms `D(f(x), y)` with gradients with respect to `f(x)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fidelity {
    /// `||fx - y||^2`, or `||fx - y||^2 / (2 sigma^2)` when `sigma` is set.
    Gaussian {
        #[serde(default)]
        sigma: Option<f64>,
    },
    /// Negative Poisson log-likelihood of log-transformed photon counts.
    PoissonCt { n0: f64 },
}

impl Fidelity {
    pub fn gaussian() -> Self {
        Fidelity::Gaussian { sigma: None }
    }

    pub fn poisson_ct(n0: f64) -> Self {
        Fidelity::PoissonCt { n0 }
    }

    pub fn evaluate(&self, fx: &Array2<f64>, y: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        match *self {
            Fidelity::Gaussian { sigma: None } => gaussian_fidelity(fx, y),
            Fidelity::Gaussian { sigma: Some(sigma) } => {
                if !(sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!("noise level {sigma} must be positive")));
                }
                let (v, g) = gaussian_fidelity(fx, y)?;
                let scale = 1.0 / (2.0 * sigma * sigma);
                Ok((v * scale, g * scale))
            }
            Fidelity::PoissonCt { n0 } => poisson_fidelity(fx, y, n0),
        }
    }
}

fn same_shape(fx: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if fx.dim() != y.dim() {
        return Err(Error::shape("fidelity", format!("{:?}", y.dim()), format!("{:?}", fx.dim())));
    }
    Ok(())
}

/// `(||fx - y||^2, 2 (fx - y))`
pub fn gaussian_fidelity(fx: &Array2<f64>, y: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    same_shape(fx, y)?;
    let r = fx - y;
    let value = r.iter().map(|v| v * v).sum();
    Ok((value, r * 2.0))
}

/// `sum_i n0 e^{-fx_i} - n0 e^{-y_i} (-fx_i + ln n0)` with gradient
/// `n0 (e^{-y_i} - e^{-fx_i})`.
pub fn poisson_fidelity(fx: &Array2<f64>, y: &Array2<f64>, n0: f64) -> Result<(f64, Array2<f64>)> {
    same_shape(fx, y)?;
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidArgument(format!("photon count {n0} must be positive")));
    }
    let ln_n0 = n0.ln();
    let mut value = 0.0;
    let mut grad = Array2::zeros(fx.dim());
    for ((idx, &t), &obs) in fx.indexed_iter().zip(y.iter()) {
        let (et, ey) = ((-t).exp(), (-obs).exp());
        if !et.is_finite() || !ey.is_finite() || !t.is_finite() {
            return Err(Error::NonFinite(format!("poisson fidelity overflow at {idx:?} (fx = {t}, y = {obs})")));
        }
        value += n0 * et - n0 * ey * (-t + ln_n0);
        grad[idx] = n0 * (ey - et);
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, ValueGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, lo: f64, hi: f64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((6, 7), |_| rng.random_range(lo..hi))
    }

    #[test]
    fn gaussian_examples() {
        let y = random(1, 0.0, 1.0);
        let (v, g) = gaussian_fidelity(&y, &y).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let y = Array2::zeros((10, 10));
        let (v, _) = gaussian_fidelity(&Array2::from_elem((10, 10), 0.1), &y).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!(gaussian_fidelity(&Array2::zeros((2, 3)), &Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn scaled_gaussian() {
        let fx = Array2::from_elem((2, 2), 0.5);
        let y = Array2::zeros((2, 2));
        let (v, g) = Fidelity::Gaussian { sigma: Some(0.5) }.evaluate(&fx, &y).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!((g[[0, 0]] - 2.0).abs() < 1e-12);
        assert!(Fidelity::Gaussian { sigma: Some(0.0) }.evaluate(&fx, &y).is_err());
    }

    fn check(fid: Fidelity, y: Array2<f64>, at: Array2<f64>) -> f64 {
        let report = grad_check(
            |p: &ValueGrid| {
                let fx = p.to_array2().unwrap();
                let (v, g) = fid.evaluate(&fx, &y)?;
                Ok((v, ValueGrid::from_array2(&g)?))
            },
            &ValueGrid::from_array2(&at).unwrap(),
            1e-5,
        )
        .unwrap();
        report.max_rel_error
    }

    #[test]
    fn gradients_match_differences() {
        assert!(check(Fidelity::gaussian(), random(2, 0.0, 1.0), random(3, 0.0, 1.0)) < 1e-8);
        assert!(check(Fidelity::poisson_ct(4096.0), random(4, 0.0, 2.0), random(5, 0.0, 2.0)) < 1e-6);
    }

    #[test]
    fn poisson_examples() {
        let y = random(6, 0.0, 3.0);
        let (_, g) = poisson_fidelity(&y, &y, 4096.0).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-9));
        let (v, _) = poisson_fidelity(&Array2::zeros((1, 1)), &Array2::zeros((1, 1)), 4096.0).unwrap();
        assert!((v - 4096.0 * (1.0 - 4096f64.ln())).abs() < 1e-9);
        assert!((v - -29973.57).abs() < 0.01);
        let err = poisson_fidelity(&Array2::from_elem((1, 2), -800.0), &Array2::zeros((1, 2)), 4096.0).unwrap_err();
        assert!(err.to_string().contains("(0, 0)"));
    }

    #[test]
    fn poisson_is_midpoint_convex_and_minimized_at_y() {
        let y = random(7, 0.0, 2.0);
        let n0 = 100.0;
        let f = |t: &Array2<f64>| poisson_fidelity(t, &y, n0).unwrap().0;
        for seed in 0..20 {
            let a = random(100 + seed, -1.0, 3.0);
            let b = random(200 + seed, -1.0, 3.0);
            let mid = (&a + &b) * 0.5;
            assert!(f(&mid) <= 0.5 * (f(&a) + f(&b)) + 1e-9);
            assert!(f(&y) <= f(&a));
        }
    }
}
