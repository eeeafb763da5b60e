use thiserror::Error;

use crate::dag::DagError;
use crate::data::DataError;
use crate::glm::GlmError;
use crate::imputation::ImputeError;
use crate::mediation::MediationError;
use crate::scm::ScmError;
use crate::sensitivity::EvalueError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Umbrella error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Mediation(#[from] MediationError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Evalue(#[from] EvalueError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error("{0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
