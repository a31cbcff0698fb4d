use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `ln Poisson(l; λ) = l·ln λ − ln Γ(l+1) − λ` for a segment of `l ≥ 1`
/// frames.
pub fn poisson_log_pmf(l: usize, lambda: f64) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidArgument("segment length must be at least 1".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("Poisson mean must be positive, got {lambda}")));
    }
    let l = l as f64;
    Ok(l * lambda.ln() - ln_gamma(l + 1.0) - lambda)
}
