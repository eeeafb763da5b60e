//! Design matrices and weighted logistic regression.

mod design;
mod irls;
mod wald;

use thiserror::Error;

use crate::data::DataError;

pub use design::{build_design, encode_column, resolve_weights, response, DesignMatrix, ModelSpec, Term, WeightSource};
pub use irls::{fit_logistic, log_likelihood_at, score, sigmoid, CoefficientRow, FitOptions, FitReport, FitResult};
pub(crate) use irls::collinear_columns;
pub use wald::{wald_from, wald_interval, z_quantile, VarianceKind, Z_95};

#[derive(Debug, Error)]
pub enum GlmError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid model: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("design is rank deficient: {columns:?} collinear with earlier columns")]
    RankDeficient { columns: Vec<String> },
    #[error("no convergence after {iterations} iterations (max |score| = {max_abs_score:e})")]
    NonConvergence { iterations: usize, max_abs_score: f64 },
    #[error("separation detected at iteration {iteration}: |coefficient| reached {max_abs_coefficient:.1} while deviance kept falling")]
    Separation { iteration: usize, max_abs_coefficient: f64 },
    #[error("fit did not converge")]
    NotConverged,
    #[error("coefficient index {index} out of range (p = {p})")]
    IndexOutOfRange { index: usize, p: usize },
}
