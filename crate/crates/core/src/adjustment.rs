//! Propensity-score adjustment: regression on the score and inverse
//! probability weighting, with overlap and balance diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, VariableRoles};
use crate::estimators::{exposure_coefficient, fit_spec, EffectEstimator, EstimatorOptions};
use crate::glm::{build_design, response, DesignMatrix, FitOptions, FitResult, ModelSpec, VarianceKind, WeightSource};
use crate::mediation::{quantile, CoefficientEstimate, MediationError, Variant};

/// Column name under which the score enters the outcome model.
pub const PS_COLUMN: &str = "__ps";

#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub fit: FitResult,
    pub design: DesignMatrix,
    /// Fitted Pr(exposure = 1 | covariates), one per row.
    pub scores: Vec<f64>,
    pub exposure: Vec<f64>,
    /// Survey weights used in the fit (ones when unweighted).
    pub base_weights: Vec<f64>,
    pub includes_mediator: bool,
}

fn survey_weights(ds: &Dataset) -> WeightSource {
    match ds.weight_column() {
        Some(w) => WeightSource::Column(w.to_string()),
        None => WeightSource::None,
    }
}

pub fn propensity_spec(ds: &Dataset, roles: &VariableRoles, include_mediator: bool) -> ModelSpec {
    let mut spec = ModelSpec::new(&roles.exposure, None);
    for c in roles.adjustment_columns() {
        spec = spec.main(c);
    }
    if include_mediator {
        for m in &roles.mediators {
            spec = spec.main(m);
        }
    }
    spec.weights(survey_weights(ds))
}

/// Survey-weighted logistic model of the exposure on baseline support,
/// covariates and year, optionally with the mediators.
pub fn fit_propensity(
    ds: &Dataset,
    roles: &VariableRoles,
    include_mediator: bool,
    fit: &FitOptions,
) -> Result<PropensityFit, MediationError> {
    roles.validate(ds)?;
    let spec = propensity_spec(ds, roles, include_mediator);
    let design = build_design(ds, &spec)?;
    let (result, base_weights) = fit_spec(ds, &spec, fit)?;
    let exposure = response(ds, &roles.exposure)?;
    Ok(PropensityFit {
        scores: result.fitted.clone(),
        fit: result,
        design,
        exposure,
        base_weights,
        includes_mediator: include_mediator,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PsOptions {
    /// Refit the score with the mediators for the direct-effect model.
    pub mediator_in_score_for_direct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpwOptions {
    pub stabilized: bool,
    /// Lower and upper score quantiles to clamp at.
    pub trim: Option<(f64, f64)>,
    /// Also adjust the weighted outcome model for the confounders.
    pub outcome_covariates: bool,
}

impl Default for IpwOptions {
    fn default() -> Self {
        IpwOptions {
            stabilized: true,
            trim: None,
            outcome_covariates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwWeights {
    pub weights: Vec<f64>,
    pub stabilized: bool,
    pub marginal_exposed: f64,
    pub trim: Option<(f64, f64)>,
    /// Rows whose score was clamped.
    pub n_trimmed: usize,
}

/// Inverse probability weights from scores. Stabilized weights multiply by
/// the marginal exposure probability, computed with `base_weights` when given.
pub fn ipw_weights_from_scores(
    scores: &[f64],
    exposure: &[f64],
    base_weights: Option<&[f64]>,
    stabilized: bool,
    trim: Option<(f64, f64)>,
) -> Result<IpwWeights, MediationError> {
    if scores.len() != exposure.len() || base_weights.is_some_and(|w| w.len() != scores.len()) {
        return Err(MediationError::InvalidArgument("score, exposure and weight lengths differ".into()));
    }
    if let Some(i) = scores.iter().position(|s| !(*s > 0.0 && *s < 1.0)) {
        return Err(MediationError::ScoreOutOfRange(i + 1));
    }
    let mut clamped = scores.to_vec();
    let mut n_trimmed = 0;
    if let Some((qlo, qhi)) = trim {
        if !(0.0..=1.0).contains(&qlo) || !(0.0..=1.0).contains(&qhi) || qlo > qhi {
            return Err(MediationError::InvalidArgument(format!("trim quantiles ({qlo}, {qhi})")));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile(&sorted, qlo), quantile(&sorted, qhi));
        for s in clamped.iter_mut() {
            if *s < lo || *s > hi {
                n_trimmed += 1;
                *s = s.clamp(lo, hi);
            }
        }
    }
    let ones;
    let bw = match base_weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; scores.len()];
            &ones
        }
    };
    let sw: f64 = bw.iter().sum();
    let marginal = exposure.iter().zip(bw).map(|(q, w)| q * w).sum::<f64>() / sw;
    let weights = clamped
        .iter()
        .zip(exposure)
        .map(|(&e, &q)| {
            let (num, den) = if q == 1.0 { (marginal, e) } else { (1.0 - marginal, 1.0 - e) };
            if stabilized {
                num / den
            } else {
                1.0 / den
            }
        })
        .collect();
    Ok(IpwWeights {
        weights,
        stabilized,
        marginal_exposed: marginal,
        trim,
        n_trimmed,
    })
}

pub fn ipw_weights(ps: &PropensityFit, stabilized: bool, trim: Option<(f64, f64)>) -> Result<IpwWeights, MediationError> {
    ipw_weights_from_scores(&ps.scores, &ps.exposure, Some(&ps.base_weights), stabilized, trim)
}

/// Regression on the propensity score: the outcome model has the exposure,
/// the score and, for the direct effect, the mediators.
#[derive(Debug, Clone)]
pub struct PropensityRegression {
    opts: EstimatorOptions,
}

impl PropensityRegression {
    pub fn new(opts: &EstimatorOptions) -> Self {
        PropensityRegression { opts: *opts }
    }

    fn outcome_fit(
        &self,
        ds: &Dataset,
        roles: &VariableRoles,
        scores: &[f64],
        with_mediators: bool,
    ) -> Result<CoefficientEstimate, MediationError> {
        let ds = ds.with_column(Column::continuous(PS_COLUMN, scores)?)?;
        let mut spec = ModelSpec::new(&roles.outcome, Some(&roles.exposure)).main(PS_COLUMN);
        if with_mediators {
            for m in &roles.mediators {
                spec = spec.main(m);
            }
        }
        let spec = spec.weights(survey_weights(&ds));
        let (fit, _) = fit_spec(&ds, &spec, &self.opts.fit)?;
        exposure_coefficient(&fit, &roles.exposure, self.opts.variance)
    }

    fn direct_scores(&self, ds: &Dataset, roles: &VariableRoles, total_scores: Vec<f64>) -> Result<Vec<f64>, MediationError> {
        if self.opts.ps.mediator_in_score_for_direct {
            Ok(fit_propensity(ds, roles, true, &self.opts.fit)?.scores)
        } else {
            Ok(total_scores)
        }
    }
}

impl EffectEstimator for PropensityRegression {
    fn name(&self) -> &str {
        Variant::PsRegression.as_str()
    }

    fn variant(&self) -> Variant {
        Variant::PsRegression
    }

    fn total(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
        let ps = fit_propensity(ds, roles, false, &self.opts.fit)?;
        self.outcome_fit(ds, roles, &ps.scores, false)
    }

    fn direct(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
        if roles.mediators.is_empty() {
            return Err(MediationError::NoMediators);
        }
        let ps = fit_propensity(ds, roles, false, &self.opts.fit)?;
        let scores = self.direct_scores(ds, roles, ps.scores)?;
        self.outcome_fit(ds, roles, &scores, true)
    }

    fn total_and_direct(
        &self,
        ds: &Dataset,
        roles: &VariableRoles,
    ) -> Result<(CoefficientEstimate, CoefficientEstimate), MediationError> {
        if roles.mediators.is_empty() {
            return Err(MediationError::NoMediators);
        }
        let ps = fit_propensity(ds, roles, false, &self.opts.fit)?;
        let total = self.outcome_fit(ds, roles, &ps.scores, false)?;
        let scores = self.direct_scores(ds, roles, ps.scores)?;
        Ok((total, self.outcome_fit(ds, roles, &scores, true)?))
    }
}

/// Weighted outcome model with weights `ipw x survey` and sandwich variance.
#[derive(Debug, Clone)]
pub struct InverseProbabilityWeighting {
    opts: EstimatorOptions,
}

impl InverseProbabilityWeighting {
    pub fn new(opts: &EstimatorOptions) -> Self {
        InverseProbabilityWeighting { opts: *opts }
    }

    pub fn weights(&self, ds: &Dataset, roles: &VariableRoles) -> Result<IpwWeights, MediationError> {
        let ps = fit_propensity(ds, roles, false, &self.opts.fit)?;
        ipw_weights(&ps, self.opts.ipw.stabilized, self.opts.ipw.trim)
    }

    fn outcome_fit(
        &self,
        ds: &Dataset,
        roles: &VariableRoles,
        ipw: &IpwWeights,
        with_mediators: bool,
    ) -> Result<CoefficientEstimate, MediationError> {
        const COMBINED: &str = "__ipw_weight";
        let base = ds.weights();
        let combined: Vec<f64> = ipw.weights.iter().zip(&base).map(|(a, b)| a * b).collect();
        let ds = ds.with_column(Column::continuous(COMBINED, &combined)?)?;
        let mut spec = ModelSpec::new(&roles.outcome, Some(&roles.exposure));
        if self.opts.ipw.outcome_covariates {
            for c in roles.adjustment_columns() {
                spec = spec.main(c);
            }
        }
        if with_mediators {
            for m in &roles.mediators {
                spec = spec.main(m);
            }
        }
        let spec = spec.weights(WeightSource::Column(COMBINED.into()));
        let (fit, _) = fit_spec(&ds, &spec, &self.opts.fit)?;
        exposure_coefficient(&fit, &roles.exposure, VarianceKind::Sandwich)
    }
}

impl EffectEstimator for InverseProbabilityWeighting {
    fn name(&self) -> &str {
        Variant::Ipw.as_str()
    }

    fn variant(&self) -> Variant {
        Variant::Ipw
    }

    fn total(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
        let w = self.weights(ds, roles)?;
        self.outcome_fit(ds, roles, &w, false)
    }

    fn direct(&self, ds: &Dataset, roles: &VariableRoles) -> Result<CoefficientEstimate, MediationError> {
        if roles.mediators.is_empty() {
            return Err(MediationError::NoMediators);
        }
        let w = self.weights(ds, roles)?;
        self.outcome_fit(ds, roles, &w, true)
    }

    fn total_and_direct(
        &self,
        ds: &Dataset,
        roles: &VariableRoles,
    ) -> Result<(CoefficientEstimate, CoefficientEstimate), MediationError> {
        if roles.mediators.is_empty() {
            return Err(MediationError::NoMediators);
        }
        let w = self.weights(ds, roles)?;
        Ok((self.outcome_fit(ds, roles, &w, false)?, self.outcome_fit(ds, roles, &w, true)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHistogram {
    pub group: String,
    /// Share of the group's (survey-weighted) mass in each bin; sums to 1.
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmdRow {
    pub covariate: String,
    pub before: f64,
    pub after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiagnostics {
    /// Bin edges over [0, 1], `bins + 1` values.
    pub edges: Vec<f64>,
    pub groups: Vec<GroupHistogram>,
    pub smd: Vec<SmdRow>,
    pub includes_mediator: bool,
    pub n_trimmed: usize,
}

fn weighted_moments(v: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let m = v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let var = v.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / sw;
    (m, var)
}

/// Standardized mean differences of the score-model design columns. The
/// denominator is the pooled SD before weighting in both columns, so the
/// change reflects the weights alone.
fn smd_rows(ps: &PropensityFit, ipw: Option<&IpwWeights>) -> Vec<SmdRow> {
    let n = ps.exposure.len();
    let treated: Vec<usize> = (0..n).filter(|&i| ps.exposure[i] == 1.0).collect();
    let control: Vec<usize> = (0..n).filter(|&i| ps.exposure[i] != 1.0).collect();
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let base = &ps.base_weights;
    let after_w: Option<Vec<f64>> = ipw.map(|w| w.weights.iter().zip(base).map(|(a, b)| a * b).collect());
    (1..ps.design.ncols())
        .map(|j| {
            let col: Vec<f64> = ps.design.x.column(j).iter().copied().collect();
            let (x1, x0) = (pick(&col, &treated), pick(&col, &control));
            let (_, v1) = weighted_moments(&x1, &vec![1.0; x1.len()]);
            let (_, v0) = weighted_moments(&x0, &vec![1.0; x0.len()]);
            let sd = ((v1 + v0) / 2.0).sqrt();
            let scale = |d: f64| if sd > 0.0 { d / sd } else { 0.0 };
            let (b1, _) = weighted_moments(&x1, &pick(base, &treated));
            let (b0, _) = weighted_moments(&x0, &pick(base, &control));
            let after = after_w.as_ref().map(|w| {
                let (a1, _) = weighted_moments(&x1, &pick(w, &treated));
                let (a0, _) = weighted_moments(&x0, &pick(w, &control));
                scale(a1 - a0)
            });
            SmdRow {
                covariate: ps.design.names[j].clone(),
                before: scale(b1 - b0),
                after,
            }
        })
        .collect()
}

pub fn overlap_diagnostics(
    ps: &PropensityFit,
    bins: usize,
    ipw: Option<&IpwWeights>,
) -> Result<OverlapDiagnostics, MediationError> {
    if bins < 2 {
        return Err(MediationError::InvalidArgument("histogram needs at least two bins".into()));
    }
    let edges: Vec<f64> = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    let mut groups = Vec::new();
    for (label, value) in [("unexposed", 0.0), ("exposed", 1.0)] {
        let mut mass = vec![0.0; bins];
        let mut total = 0.0;
        for ((s, q), w) in ps.scores.iter().zip(&ps.exposure).zip(&ps.base_weights) {
            if *q == value {
                let b = ((s * bins as f64) as usize).min(bins - 1);
                mass[b] += w;
                total += w;
            }
        }
        if total == 0.0 {
            return Err(MediationError::EmptyGroup(label.into()));
        }
        groups.push(GroupHistogram {
            group: label.into(),
            proportions: mass.into_iter().map(|m| m / total).collect(),
        });
    }
    Ok(OverlapDiagnostics {
        edges,
        groups,
        smd: smd_rows(ps, ipw),
        includes_mediator: ps.includes_mediator,
        n_trimmed: ipw.map_or(0, |w| w.n_trimmed),
    })
}

impl OverlapDiagnostics {
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("group,bin_lo,bin_hi,proportion\n");
        for g in &self.groups {
            for (b, p) in g.proportions.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", g.group, self.edges[b], self.edges[b + 1], p);
            }
        }
        out
    }

    pub fn smd_csv(&self) -> String {
        let mut out = String::from("covariate,smd_before,smd_after\n");
        for r in &self.smd {
            let after = r.after.map_or(String::new(), |a| a.to_string());
            let _ = writeln!(out, "\"{}\",{},{}", r.covariate.replace('"', "\"\""), r.before, after);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;

    #[test]
    fn stabilized_weight_example() {
        let w = ipw_weights_from_scores(&[0.25, 0.25], &[1.0, 0.0], None, true, None).unwrap();
        assert_eq!(w.marginal_exposed, 0.5);
        assert_eq!(w.weights[0], 2.0);
        assert!((w.weights[1] - 0.5 / 0.75).abs() < 1e-15);
        let raw = ipw_weights_from_scores(&[0.25, 0.25], &[1.0, 0.0], None, false, None).unwrap();
        assert_eq!(raw.weights[0], 4.0);
    }

    #[test]
    fn full_range_trim_is_identity() {
        let s = [0.1, 0.3, 0.6, 0.9];
        let q = [1.0, 0.0, 1.0, 0.0];
        let a = ipw_weights_from_scores(&s, &q, None, true, None).unwrap();
        let b = ipw_weights_from_scores(&s, &q, None, true, Some((0.0, 1.0))).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(b.n_trimmed, 0);
    }

    #[test]
    fn trimming_clamps_extremes() {
        let s: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
        let q: Vec<f64> = (0..99).map(|i| (i % 2) as f64).collect();
        let w = ipw_weights_from_scores(&s, &q, None, true, Some((0.05, 0.95))).unwrap();
        assert!(w.n_trimmed > 0);
        assert!(w.weights.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn scores_outside_unit_interval_rejected() {
        assert!(matches!(
            ipw_weights_from_scores(&[0.5, 1.0], &[1.0, 0.0], None, true, None),
            Err(MediationError::ScoreOutOfRange(2))
        ));
    }

    fn small_data() -> (Dataset, VariableRoles) {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 100) as f64 / 50.0 - 1.0).collect();
        let q: Vec<bool> = (0..n).map(|i| x[i] + ((i * 13) % 7) as f64 / 7.0 > 0.4).collect();
        let m: Vec<bool> = (0..n).map(|i| q[i] ^ (i % 5 == 0)).collect();
        let y: Vec<bool> = (0..n).map(|i| (i * 31) % 3 == 0 || (q[i] && i % 4 == 0)).collect();
        let ds = Dataset::new(
            vec![
                Column::indicator("y", &y).unwrap(),
                Column::indicator("q", &q).unwrap(),
                Column::indicator("m", &m).unwrap(),
                Column::continuous("x", &x).unwrap(),
            ],
            None,
        )
        .unwrap();
        let roles = VariableRoles {
            exposure: "q".into(),
            outcome: "y".into(),
            baseline: Some("x".into()),
            mediators: vec!["m".into()],
            covariates: vec![],
            survey_year: None,
        };
        (ds, roles)
    }

    #[test]
    fn histograms_sum_to_one() {
        let (ds, roles) = small_data();
        let ps = fit_propensity(&ds, &roles, false, &FitOptions::default()).unwrap();
        let d = overlap_diagnostics(&ps, 10, None).unwrap();
        for g in &d.groups {
            assert!((g.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(d.edges.len(), 11);
        assert_eq!(d.histogram_csv().lines().count(), 21);
    }

    #[test]
    fn weighting_reduces_imbalance() {
        let (ds, roles) = small_data();
        let ps = fit_propensity(&ds, &roles, false, &FitOptions::default()).unwrap();
        let w = ipw_weights(&ps, true, None).unwrap();
        let d = overlap_diagnostics(&ps, 10, Some(&w)).unwrap();
        let row = &d.smd[0];
        assert_eq!(row.covariate, "x");
        assert!(row.after.unwrap().abs() < row.before.abs());
    }

    #[test]
    fn estimators_run() {
        let (ds, roles) = small_data();
        let opts = EstimatorOptions::default();
        for e in [
            &PropensityRegression::new(&opts) as &dyn EffectEstimator,
            &InverseProbabilityWeighting::new(&opts),
        ] {
            let (t, d) = e.total_and_direct(&ds, &roles).unwrap();
            assert!(t.log_or.is_finite() && d.log_or.is_finite());
            assert_eq!(e.total(&ds, &roles).unwrap(), t);
        }
    }
}
