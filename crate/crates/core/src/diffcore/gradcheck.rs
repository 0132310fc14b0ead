use super::ValueGrid;
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max_i |analytic_i - numeric_i| / max(1, |analytic_i|)
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient returned by `f` at `point` against central
/// differences with step `step`.
///
/// `f` returns `(value, gradient)`; only the value is used at the perturbed
/// points.
pub fn grad_check<F>(mut f: F, point: &ValueGrid, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ValueGrid) -> Result<(f64, ValueGrid)>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} must be positive")));
    }
    let (value, grad) = f(point)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("non-finite evaluation at base point".into()));
    }
    if grad.len() != point.len() {
        return Err(Error::shape("grad_check", point.len(), grad.len()));
    }

    let mut probe = point.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + step;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = x0 - step;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("non-finite evaluation near coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * step);
        let analytic = grad.data()[i];
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        if err > report.max_rel_error || i == 0 {
            report = GradCheckReport {
                max_rel_error: err.max(report.max_rel_error),
                worst_index: i,
                analytic,
                numeric,
            };
        }
    }
    Ok(report)
}
