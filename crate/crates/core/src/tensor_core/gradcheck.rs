//! Central finite-difference gradient checking.
//!
//! The checker only evaluates the loss; it never touches the tape, so it is
//! an independent reference for the reverse-mode gradients.

use super::params::ParamStore;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` gradients (already written into `store`) against
/// central differences of `loss` with step `h`. At most `max_per_param`
/// entries of each parameter are probed, spread evenly over the tensor.
pub fn check(
    store: &ParamStore,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    h: f64,
    max_per_param: usize,
) -> Result<GradCheckReport> {
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let analytic = store
            .grad(&name)
            .ok_or_else(|| crate::Error::MissingGradient(name.clone()))?
            .clone();
        let n = analytic.numel();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + h;
            let plus = loss(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - h;
            let minus = loss(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
