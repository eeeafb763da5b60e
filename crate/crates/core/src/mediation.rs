//! Total, direct and indirect effects by the two-regression procedure.
//!
//! The total effect is the exposure coefficient of an outcome model without
//! the mediators; the direct effect is the exposure coefficient once the
//! mediators enter as reference-coded main effects. The indirect effect is
//! their difference on the log-odds scale, so `OR_indirect = OR_total / OR_direct`.
//! Odds ratios are non-collapsible, so the mediator-free coefficient is not a
//! strict causal total effect; the procedure is implemented as is.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, VariableRoles};
use crate::estimators::{EffectEstimator, EstimatorOptions, EstimatorRegistry};
use crate::glm::{wald_from, z_quantile, GlmError, ModelSpec, WeightSource};

#[derive(Debug, Error)]
pub enum MediationError {
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("cannot combine estimates from variants {0} and {1}")]
    VariantMismatch(Variant, Variant),
    #[error("cannot combine estimates computed on different datasets")]
    DataMismatch,
    #[error("combine expects a total and a direct estimate, got {0:?} and {1:?}")]
    KindMismatch(EffectKind, EffectKind),
    #[error("direct effects need at least one mediator")]
    NoMediators,
    #[error("bootstrap needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{failed} of {total} bootstrap replicates failed (more than 10%)")]
    BootstrapFailures { failed: usize, total: usize },
    #[error("unknown estimator `{name}`; registered: {known:?}")]
    UnknownEstimator { name: String, known: Vec<String> },
    #[error("propensity score outside (0, 1) at row {0}")]
    ScoreOutOfRange(usize),
    #[error("exposure group `{0}` is empty")]
    EmptyGroup(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Centered covariates plus exposure x covariate interactions.
    Primary,
    /// Main effects only.
    Simple,
    PsRegression,
    Ipw,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Primary, Variant::Simple, Variant::PsRegression, Variant::Ipw];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Primary => "primary",
            Variant::Simple => "simple",
            Variant::PsRegression => "ps_regression",
            Variant::Ipw => "ipw",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Total,
    Direct,
    Indirect,
}

impl EffectKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EffectKind::Total => "total",
            EffectKind::Direct => "direct",
            EffectKind::Indirect => "indirect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Wald,
    PercentileBootstrap,
    /// Normal interval with the SD of bootstrap replicates as SE.
    BootstrapNormal,
    Rubin,
    /// Point estimate only; the interval is degenerate.
    None,
}

/// Exposure coefficient as returned by an estimator, before intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub log_or: f64,
    pub se: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub variant: Variant,
    pub log_or: f64,
    pub or: f64,
    pub se: Option<f64>,
    pub ci_or: (f64, f64),
    pub ci_method: CiMethod,
    pub n_used: usize,
    pub data_fingerprint: String,
}

impl EffectEstimate {
    pub fn wald(kind: EffectKind, variant: Variant, est: CoefficientEstimate, level: f64, fingerprint: &str) -> Self {
        let (lo, hi) = wald_from(est.log_or, est.se, level);
        EffectEstimate {
            kind,
            variant,
            log_or: est.log_or,
            or: est.log_or.exp(),
            se: Some(est.se),
            ci_or: (lo.exp(), hi.exp()),
            ci_method: CiMethod::Wald,
            n_used: est.n_used,
            data_fingerprint: fingerprint.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTriple {
    pub total: EffectEstimate,
    pub direct: EffectEstimate,
    pub indirect: EffectEstimate,
    pub seed: u64,
    pub bootstrap_reps: usize,
    pub bootstrap_failures: usize,
}

impl EffectTriple {
    pub fn effects(&self) -> [&EffectEstimate; 3] {
        [&self.total, &self.direct, &self.indirect]
    }

    pub fn variant(&self) -> Variant {
        self.total.variant
    }
}

/// Outcome model for the regression variants: exposure, baseline support,
/// covariates and survey year, plus mediators for the direct effect. With
/// `interactions`, all covariates are centered and interacted with the exposure;
/// mediators never are.
pub fn outcome_spec(ds: &Dataset, roles: &VariableRoles, interactions: bool, with_mediators: bool) -> ModelSpec {
    let mut spec = ModelSpec::new(&roles.outcome, Some(&roles.exposure)).centered(interactions);
    for c in roles.adjustment_columns() {
        spec = spec.main(c);
    }
    if with_mediators {
        for m in &roles.mediators {
            spec = spec.main(m);
        }
    }
    if interactions {
        for c in roles.adjustment_columns() {
            spec = spec.interaction(c);
        }
    }
    spec.weights(match ds.weight_column() {
        Some(w) => WeightSource::Column(w.to_string()),
        None => WeightSource::None,
    })
}

/// Effect of one kind from the default estimator registered for `variant`.
pub fn estimate_effect(
    ds: &Dataset,
    roles: &VariableRoles,
    variant: Variant,
    kind: EffectKind,
    opts: &EstimatorOptions,
) -> Result<EffectEstimate, MediationError> {
    let registry = EstimatorRegistry::with_defaults(opts);
    let est = registry.get(variant.as_str())?;
    let coef = match kind {
        EffectKind::Total => est.total(ds, roles)?,
        EffectKind::Direct => est.direct(ds, roles)?,
        EffectKind::Indirect => {
            let (t, d) = est.total_and_direct(ds, roles)?;
            let fp = ds.fingerprint();
            let t = EffectEstimate::wald(EffectKind::Total, variant, t, opts.level, &fp);
            let d = EffectEstimate::wald(EffectKind::Direct, variant, d, opts.level, &fp);
            return combine(&t, &d);
        }
    };
    Ok(EffectEstimate::wald(kind, variant, coef, opts.level, &ds.fingerprint()))
}

pub fn total_effect(
    ds: &Dataset,
    roles: &VariableRoles,
    variant: Variant,
    opts: &EstimatorOptions,
) -> Result<EffectEstimate, MediationError> {
    estimate_effect(ds, roles, variant, EffectKind::Total, opts)
}

pub fn direct_effect(
    ds: &Dataset,
    roles: &VariableRoles,
    variant: Variant,
    opts: &EstimatorOptions,
) -> Result<EffectEstimate, MediationError> {
    estimate_effect(ds, roles, variant, EffectKind::Direct, opts)
}

/// Indirect effect as total minus direct on the log-odds scale. The interval
/// is left degenerate; attach one with [`bootstrap_ci`].
pub fn combine(total: &EffectEstimate, direct: &EffectEstimate) -> Result<EffectEstimate, MediationError> {
    if total.kind != EffectKind::Total || direct.kind != EffectKind::Direct {
        return Err(MediationError::KindMismatch(total.kind, direct.kind));
    }
    if total.variant != direct.variant {
        return Err(MediationError::VariantMismatch(total.variant, direct.variant));
    }
    if total.data_fingerprint != direct.data_fingerprint {
        return Err(MediationError::DataMismatch);
    }
    let log_or = total.log_or - direct.log_or;
    let or = log_or.exp();
    Ok(EffectEstimate {
        kind: EffectKind::Indirect,
        variant: total.variant,
        log_or,
        or,
        se: None,
        ci_or: (or, or),
        ci_method: CiMethod::None,
        n_used: total.n_used.min(direct.n_used),
        data_fingerprint: total.data_fingerprint.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapInterval {
    #[default]
    Percentile,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub seed: u64,
    pub level: f64,
    pub interval: BootstrapInterval,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            reps: 1000,
            seed: 0,
            level: 0.95,
            interval: BootstrapInterval::Percentile,
        }
    }
}

/// Log-OR replicates of the total and direct effects; entry `i` of both
/// vectors comes from the same resample.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReplicates {
    pub total: Vec<f64>,
    pub direct: Vec<f64>,
    pub failed: usize,
    pub requested: usize,
}

impl BootstrapReplicates {
    pub fn values(&self, target: EffectKind) -> Vec<f64> {
        match target {
            EffectKind::Total => self.total.clone(),
            EffectKind::Direct => self.direct.clone(),
            EffectKind::Indirect => self.total.iter().zip(&self.direct).map(|(t, d)| t - d).collect(),
        }
    }
}

/// Resamples rows with replacement and refits. Replicate `r` draws its rows
/// from a generator seeded with `seed + r`, so the output does not depend on
/// the number of threads.
pub fn bootstrap_replicates(
    estimator: &dyn EffectEstimator,
    ds: &Dataset,
    roles: &VariableRoles,
    reps: usize,
    seed: u64,
) -> Result<BootstrapReplicates, MediationError> {
    if reps < 100 {
        return Err(MediationError::TooFewReplicates(reps));
    }
    let n = ds.n_rows();
    let results: Vec<Option<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let sample = ds.take_rows(&rows).ok()?;
            estimator
                .total_and_direct(&sample, roles)
                .ok()
                .map(|(t, d)| (t.log_or, d.log_or))
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed * 10 > reps {
        return Err(MediationError::BootstrapFailures { failed, total: reps });
    }
    let (total, direct) = results.into_iter().flatten().unzip();
    Ok(BootstrapReplicates {
        total,
        direct,
        failed,
        requested: reps,
    })
}

/// Linear-interpolation sample quantile (type 7).
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// OR scale.
    pub lo: f64,
    pub hi: f64,
    /// SD of the log-OR replicates.
    pub se_log: f64,
    pub used: usize,
    pub failed: usize,
}

/// Interval on the OR scale from replicates. `center` is the log-OR point
/// estimate, used by the normal interval.
pub fn interval_from_replicates(values: &[f64], center: f64, level: f64, interval: BootstrapInterval) -> (f64, f64) {
    match interval {
        BootstrapInterval::Percentile => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let a = (1.0 - level) / 2.0;
            (quantile(&sorted, a).exp(), quantile(&sorted, 1.0 - a).exp())
        }
        BootstrapInterval::Normal => {
            let half = z_quantile(level) * sample_sd(values);
            ((center - half).exp(), (center + half).exp())
        }
    }
}

pub fn bootstrap_ci(
    estimator: &dyn EffectEstimator,
    ds: &Dataset,
    roles: &VariableRoles,
    cfg: &BootstrapConfig,
    target: EffectKind,
) -> Result<BootstrapCi, MediationError> {
    let reps = bootstrap_replicates(estimator, ds, roles, cfg.reps, cfg.seed)?;
    let values = reps.values(target);
    let center = match cfg.interval {
        BootstrapInterval::Percentile => 0.0,
        BootstrapInterval::Normal => {
            let (t, d) = estimator.total_and_direct(ds, roles)?;
            match target {
                EffectKind::Total => t.log_or,
                EffectKind::Direct => d.log_or,
                EffectKind::Indirect => t.log_or - d.log_or,
            }
        }
    };
    let (lo, hi) = interval_from_replicates(&values, center, cfg.level, cfg.interval);
    Ok(BootstrapCi {
        lo,
        hi,
        se_log: sample_sd(&values),
        used: values.len(),
        failed: reps.failed,
    })
}

/// Total and direct effects with Wald intervals and the indirect effect with
/// a bootstrap interval.
pub fn estimate_triple(
    estimator: &dyn EffectEstimator,
    ds: &Dataset,
    roles: &VariableRoles,
    level: f64,
    boot: &BootstrapConfig,
) -> Result<EffectTriple, MediationError> {
    let fp = ds.fingerprint();
    let variant = estimator.variant();
    let (t, d) = estimator.total_and_direct(ds, roles)?;
    let total = EffectEstimate::wald(EffectKind::Total, variant, t, level, &fp);
    let direct = EffectEstimate::wald(EffectKind::Direct, variant, d, level, &fp);
    let mut indirect = combine(&total, &direct)?;
    let reps = bootstrap_replicates(estimator, ds, roles, boot.reps, boot.seed)?;
    let values = reps.values(EffectKind::Indirect);
    indirect.ci_or = interval_from_replicates(&values, indirect.log_or, boot.level, boot.interval);
    indirect.se = Some(sample_sd(&values));
    indirect.ci_method = match boot.interval {
        BootstrapInterval::Percentile => CiMethod::PercentileBootstrap,
        BootstrapInterval::Normal => CiMethod::BootstrapNormal,
    };
    Ok(EffectTriple {
        total,
        direct,
        indirect,
        seed: boot.seed,
        bootstrap_reps: boot.reps,
        bootstrap_failures: reps.failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(kind: EffectKind, or: f64) -> EffectEstimate {
        EffectEstimate::wald(
            kind,
            Variant::Primary,
            CoefficientEstimate {
                log_or: or.ln(),
                se: 0.1,
                n_used: 100,
            },
            0.95,
            "fp",
        )
    }

    #[test]
    fn combine_table_two_numbers() {
        let ind = combine(&est(EffectKind::Total, 3.3), &est(EffectKind::Direct, 3.1)).unwrap();
        assert!(ind.or > 1.05 && ind.or < 1.08, "{}", ind.or);
        assert_eq!(format!("{:.1}", ind.or), "1.1");
        let t = est(EffectKind::Total, 3.3);
        let d = est(EffectKind::Direct, 3.1);
        assert!((t.log_or - (d.log_or + ind.log_or)).abs() < 1e-12);
    }

    #[test]
    fn equal_total_and_direct_give_unit_indirect() {
        let ind = combine(&est(EffectKind::Total, 2.0), &est(EffectKind::Direct, 2.0)).unwrap();
        assert_eq!(ind.or, 1.0);
    }

    #[test]
    fn abstract_direct_times_indirect() {
        // 3.07 x 1.07 = 3.28, consistent with the rounded total 3.3
        let total_or: f64 = 3.07 * 1.07;
        assert!((total_or - 3.2849).abs() < 1e-4);
        assert_eq!(format!("{total_or:.1}"), "3.3");
    }

    #[test]
    fn combine_rejects_mismatches() {
        let mut d = est(EffectKind::Direct, 2.0);
        d.variant = Variant::Simple;
        assert!(matches!(
            combine(&est(EffectKind::Total, 2.0), &d),
            Err(MediationError::VariantMismatch(..))
        ));
        let mut d = est(EffectKind::Direct, 2.0);
        d.data_fingerprint = "other".into();
        assert!(matches!(combine(&est(EffectKind::Total, 2.0), &d), Err(MediationError::DataMismatch)));
        assert!(matches!(
            combine(&est(EffectKind::Direct, 2.0), &est(EffectKind::Total, 2.0)),
            Err(MediationError::KindMismatch(..))
        ));
    }

    #[test]
    fn or_matches_exp_log_or() {
        let e = est(EffectKind::Total, 3.3);
        assert!((e.or - e.log_or.exp()).abs() < 1e-12);
        assert!(e.ci_or.0 <= e.or && e.or <= e.ci_or.1);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }
}
