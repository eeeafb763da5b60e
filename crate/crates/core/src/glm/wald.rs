use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{FitResult, GlmError};

/// Two-sided 95% standard-normal quantile, fixed to six decimals.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    ModelBased,
    #[default]
    Sandwich,
}

pub fn z_quantile(level: f64) -> f64 {
    if level == 0.95 {
        return Z_95;
    }
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

pub fn wald_from(estimate: f64, se: f64, level: f64) -> (f64, f64) {
    let half = z_quantile(level) * se;
    (estimate - half, estimate + half)
}

/// Log-odds interval for one coefficient.
pub fn wald_interval(fit: &FitResult, index: usize, level: f64, kind: VarianceKind) -> Result<(f64, f64), GlmError> {
    if !fit.converged {
        return Err(GlmError::NotConverged);
    }
    if index >= fit.coefficients.len() {
        return Err(GlmError::IndexOutOfRange {
            index,
            p: fit.coefficients.len(),
        });
    }
    Ok(wald_from(fit.coefficients[index], fit.se(index, kind), level))
}
