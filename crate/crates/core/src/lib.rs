//! Causal mediation analysis for a binary exposure with a post-exposure mediator.
//!
//! The crate estimates total, direct and indirect effects with the two-regression
//! procedure (outcome model without and with the mediator), and ships the
//! machinery around it: CSV ingestion and recoding, weighted logistic regression
//! by IRLS, propensity scores and inverse probability weighting, multiple
//! imputation by predictive mean matching with Rubin pooling, E-values, DAG
//! backdoor checks, and an exactly enumerable structural causal model used as
//! ground truth for the identification formulas.
//!
//! Estimator variants implement [`estimators::EffectEstimator`] and are looked up
//! by name in an [`estimators::EstimatorRegistry`].

pub mod adjustment;
pub mod dag;
pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod imputation;
pub mod mediation;
pub mod pipeline;
pub mod scm;
pub mod sensitivity;
pub mod synthetic;

pub use error::{Error, Result};
