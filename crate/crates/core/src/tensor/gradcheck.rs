use super::{Grads, ParamStore};
use crate::error::{Error, Result};

/// Compare analytic gradients against central finite differences.
///
/// Returns `max |analytic − numeric| / max(1, |numeric|)` over every scalar
/// parameter in `params`.
pub fn finite_diff_check<F>(params: &ParamStore, analytic: &Grads, step: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if analytic.len() != params.len() {
        return Err(Error::invalid("gradient set does not match parameters"));
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        for j in 0..params.get(i).len() {
            let orig = params.get(i).data()[j];
            probe.get_mut(i).data_mut()[j] = orig + step;
            let up = loss(&probe);
            probe.get_mut(i).data_mut()[j] = orig - step;
            let down = loss(&probe);
            probe.get_mut(i).data_mut()[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite {
                    parameter: format!("{}[{j}]", params.name(i)),
                });
            }
            let numeric = (up - down) / (2.0 * step);
            let err = (analytic.get(i).data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
