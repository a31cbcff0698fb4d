use crate::error::{Error, Result};

/// Compares the analytic gradient of `function` at `params` against central
/// differences with step `epsilon`.
///
/// `function` returns the objective value together with its analytic
/// gradient. The result is the largest coordinate-wise relative error
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(mut function: F, params: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let (value, analytic) = function(params);
    if !value.is_finite() {
        return Err(Error::NonFinite("objective at the base point".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::dim("analytic gradient", params.len(), analytic.len()));
    }

    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + epsilon;
        let (plus, _) = function(&probe);
        probe[i] = params[i] - epsilon;
        let (minus, _) = function(&probe);
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
