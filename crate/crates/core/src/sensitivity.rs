//! E-values for odds ratios.
//!
//! An odds ratio is first put on the risk-ratio scale (square root for a
//! common outcome, unchanged for a rare one) and oriented away from the null;
//! the E-value is then `rr + sqrt(rr * (rr - 1))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalueError {
    #[error("odds ratio must be positive and finite, got {0}")]
    InvalidRatio(f64),
    #[error("confidence limits ({0}, {1}) are not a positive, ordered pair")]
    InvalidInterval(f64, f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrConversion {
    /// Common outcome: RR approximated by sqrt(OR).
    #[default]
    SqrtOr,
    /// Rare outcome: RR approximated by OR.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalueResult {
    #[serde(rename = "or")]
    pub input_or: f64,
    pub rr_used: f64,
    pub evalue_point: f64,
    /// E-value of the limit nearer the null; 1 when the interval contains 1.
    pub evalue_ci: Option<f64>,
    pub conversion: OrConversion,
}

fn to_rr(or: f64, conversion: OrConversion) -> f64 {
    let or = if or < 1.0 { 1.0 / or } else { or };
    match conversion {
        OrConversion::SqrtOr => or.sqrt(),
        OrConversion::Identity => or,
    }
}

/// E-value for a risk ratio already oriented so that `rr >= 1`.
pub fn evalue_rr(rr: f64) -> f64 {
    rr + (rr * (rr - 1.0)).sqrt()
}

/// Risk ratio whose E-value is `e`: inverse of [`evalue_rr`] on `e >= 1`.
pub fn rr_from_evalue(e: f64) -> f64 {
    e * e / (2.0 * e - 1.0)
}

pub fn evalue(or: f64, ci: Option<(f64, f64)>, conversion: OrConversion) -> Result<EvalueResult, EvalueError> {
    if !(or.is_finite() && or > 0.0) {
        return Err(EvalueError::InvalidRatio(or));
    }
    let rr = to_rr(or, conversion);
    let evalue_ci = match ci {
        None => None,
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(EvalueError::InvalidInterval(lo, hi));
            }
            Some(if lo <= 1.0 && hi >= 1.0 {
                1.0
            } else {
                let near = if lo > 1.0 { lo } else { hi };
                evalue_rr(to_rr(near, conversion))
            })
        }
    };
    Ok(EvalueResult {
        input_or: or,
        rr_used: rr,
        evalue_point: evalue_rr(rr),
        evalue_ci,
        conversion,
    })
}
