//! Effect estimators behind a common trait, registered by name.

use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::adjustment::{InverseProbabilityWeighting, IpwOptions, PropensityRegression, PsOptions};
use crate::data::{Dataset, VariableRoles};
use crate::glm::{build_design, fit_logistic, resolve_weights, response, FitOptions, FitResult, ModelSpec, VarianceKind};
use crate::mediation::{outcome_spec, CoefficientEstimate, MediationError, Variant};

pub trait EffectEstimator: Send + Sync {
    fn name(&self) -> &str;

    fn variant(&self) -> Variant;

    fn total(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError>;

    fn direct(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError>;

    /// Both effects on the same data; estimators that share work between the
    /// two fits override this.
    fn total_and_direct(
        &self,
        ds: &Dataset,
        roles: &VariableRoles,
    ) -> Result<(CoefficientEstimate, CoefficientEstimate), MediationError> {
        Ok((self.total(ds, roles)?, self.direct(ds, roles)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    pub fit: FitOptions,
    pub level: f64,
    pub variance: VarianceKind,
    pub ps: PsOptions,
    pub ipw: IpwOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            fit: FitOptions::default(),
            level: 0.95,
            variance: VarianceKind::Sandwich,
            ps: PsOptions::default(),
            ipw: IpwOptions::default(),
        }
    }
}

/// Fits `spec` on `ds` with the weights it names.
pub fn fit_spec(ds: &Dataset, spec: &ModelSpec, fit: &FitOptions) -> Result<(FitResult, Vec<f64>), MediationError> {
    let design = build_design(ds, spec)?;
    let y = response(ds, &spec.outcome)?;
    let w = resolve_weights(ds, &spec.weight_source)?;
    let opts = FitOptions {
        max_iter: spec.max_iter,
        tol: spec.tol,
        ..*fit
    };
    Ok((fit_logistic(&design, &y, &w, &opts)?, w))
}

/// Exposure coefficient of a fitted model.
pub fn exposure_coefficient(
    fit: &FitResult,
    exposure: &str,
    variance: VarianceKind,
) -> Result<CoefficientEstimate, MediationError> {
    let j = fit
        .coefficient_index(exposure)
        .ok_or_else(|| MediationError::InvalidArgument(format!("exposure `{exposure}` not in the model")))?;
    Ok(CoefficientEstimate {
        log_or: fit.coefficients[j],
        se: fit.se(j, variance),
        n_used: fit.n_obs,
    })
}

/// Conventional covariate adjustment: `primary` adds centered exposure x
/// covariate interactions, `simple` uses main effects only.
#[derive(Debug, Clone)]
pub struct OutcomeRegression {
    variant: Variant,
    opts: EstimatorOptions,
}

impl OutcomeRegression {
    pub fn primary(opts: &EstimatorOptions) -> Self {
        OutcomeRegression {
            variant: Variant::Primary,
            opts: *opts,
        }
    }

    pub fn simple(opts: &EstimatorOptions) -> Self {
        OutcomeRegression {
            variant: Variant::Simple,
            opts: *opts,
        }
    }

    fn effect(&self, ds: &Dataset, roles: &VariableRoles, with_mediators: bool) -> Result<CoefficientEstimate, MediationError> {
        if with_mediators && roles.mediators.is_empty() {
            return Err(MediationError::NoMediators);
        }
        roles.validate(ds)?;
        let spec = outcome_spec(ds, roles, self.variant == Variant::Primary, with_mediators);
        let (fit, _) = fit_spec(ds, &spec, &self.opts.fit)?;
        exposure_coefficient(&fit, &roles.exposure, self.opts.variance)
    }
}

impl EffectEstimator for OutcomeRegression {
    fn name(&self) -> &str {
        self.variant.as_str()
    }

    fn variant(&self) -> Variant {
        self.variant
    }

    fn total(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
        self.effect(ds, roles, false)
    }

    fn direct(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
        self.effect(ds, roles, true)
    }
}

#[derive(Clone, Default)]
pub struct EstimatorRegistry {
    estimators: IndexMap<String, Arc<dyn EffectEstimator>>,
}

impl EstimatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The four built-in variants under their canonical names.
    pub fn with_defaults(opts: &EstimatorOptions) -> Self {
        let mut r = Self::new();
        r.register(Arc::new(OutcomeRegression::primary(opts)));
        r.register(Arc::new(OutcomeRegression::simple(opts)));
        r.register(Arc::new(PropensityRegression::new(opts)));
        r.register(Arc::new(InverseProbabilityWeighting::new(opts)));
        r
    }

    /// Adds or replaces the estimator under its own name.
    pub fn register(&mut self, estimator: Arc<dyn EffectEstimator>) {
        self.estimators.insert(estimator.name().to_string(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn EffectEstimator>, MediationError> {
        self.estimators
            .get(name)
            .cloned()
            .ok_or_else(|| MediationError::UnknownEstimator {
                name: name.to_string(),
                known: self.names(),
            })
    }

    pub fn names(&self) -> Vec<String> {
        self.estimators.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed;

    impl EffectEstimator for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn variant(&self) -> Variant {
            Variant::Simple
        }
        fn total(&self, _: &Dataset, _: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
            Ok(CoefficientEstimate {
                log_or: 1.0,
                se: 0.1,
                n_used: 1,
            })
        }
        fn direct(&self, _: &Dataset, _: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
            Ok(CoefficientEstimate {
                log_or: 0.5,
                se: 0.1,
                n_used: 1,
            })
        }
    }

    #[test]
    fn defaults_are_registered() {
        let r = EstimatorRegistry::with_defaults(&EstimatorOptions::default());
        assert_eq!(r.names(), vec!["primary", "simple", "ps_regression", "ipw"]);
        for v in Variant::ALL {
            assert_eq!(r.get(v.as_str()).unwrap().variant(), v);
        }
    }

    #[test]
    fn unknown_name_lists_known() {
        let r = EstimatorRegistry::with_defaults(&EstimatorOptions::default());
        match r.get("g_formula") {
            Err(MediationError::UnknownEstimator { name, known }) => {
                assert_eq!(name, "g_formula");
                assert_eq!(known.len(), 4);
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected an error"),
        }
    }

    #[test]
    fn custom_estimator_can_be_registered() {
        let mut r = EstimatorRegistry::new();
        r.register(Arc::new(Fixed));
        let e = r.get("fixed").unwrap();
        let ds = Dataset::new(vec![], None).unwrap_or_else(|_| panic!());
        let roles = VariableRoles::default();
        let (t, d) = e.total_and_direct(&ds, &roles).unwrap();
        assert_eq!(t.log_or - d.log_or, 0.5);
    }
}
