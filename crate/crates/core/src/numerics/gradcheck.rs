use serde::Serialize;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::Result;

/// Finite-difference step for the five-point stencil.
pub const FD_STEP: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Elements with relative error at or above 1e-4.
    pub over_1e4: usize,
    /// Largest relative error among elements with `max(|a|, |b|) >= 1e-6`.
    pub max_rel_err_large: f64,
    /// `(param name, flat index, analytic, numeric)` of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compares `analytic` with central finite differences of `loss` over every
/// element of the listed parameters. `loss` must be deterministic (no dropout).
pub fn check_gradients<F>(
    name: &str,
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &Gradients,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_err: 0.0,
        over_1e4: 0,
        max_rel_err_large: 0.0,
        worst: None,
    };
    for &id in ids {
        let n = store.get(id).numel();
        for i in 0..n {
            let orig = store.get(id).data()[i];
            let h = FD_STEP;
            let mut at = |x: f64| -> Result<f64> {
                store.get_mut(id).data_mut()[i] = x;
                loss(store)
            };
            let (p1, m1) = (at(orig + h)?, at(orig - h)?);
            let (p2, m2) = (at(orig + 2.0 * h)?, at(orig - 2.0 * h)?);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err >= 1e-4 {
                report.over_1e4 += 1;
            }
            if a.abs().max(numeric.abs()) >= 1e-6 {
                report.max_rel_err_large = report.max_rel_err_large.max(err);
            }
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.param(id).name.clone(), i, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
