use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{impute, ImputationConfig, ImputeError};
use crate::data::{Cell, Column, ColumnKind, Dataset, Value, VariableRoles};
use crate::estimators::EffectEstimator;
use crate::glm::z_quantile;
use crate::mediation::{
    bootstrap_replicates, sample_sd, BootstrapConfig, CiMethod, EffectEstimate, EffectKind, EffectTriple,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub m: usize,
    /// Pooled log-OR.
    pub q_bar: f64,
    /// Within-imputation variance.
    pub w: f64,
    /// Between-imputation variance.
    pub b: f64,
    /// Total variance `W + (1 + 1/m) B`.
    pub t: f64,
    /// Barnard-Rubin degrees of freedom; `None` when infinite.
    pub df: Option<f64>,
    pub level: f64,
    pub ci_or: (f64, f64),
}

/// Rubin's rules over `(log_or, se)` pairs. `nu_com` is the complete-data
/// degrees of freedom, `None` for a large-sample (normal) analysis.
pub fn pool(estimates: &[(f64, f64)], nu_com: Option<f64>, level: f64) -> Result<PooledEstimate, ImputeError> {
    let m = estimates.len();
    if m == 0 {
        return Err(ImputeError::NoEstimates);
    }
    if let Some(&(_, se)) = estimates.iter().find(|(_, se)| !(se.is_finite() && *se > 0.0)) {
        return Err(ImputeError::InvalidSe(se));
    }
    let mf = m as f64;
    let q_bar = estimates.iter().map(|e| e.0).sum::<f64>() / mf;
    let w = estimates.iter().map(|e| e.1 * e.1).sum::<f64>() / mf;
    let b = if m > 1 {
        estimates.iter().map(|e| (e.0 - q_bar).powi(2)).sum::<f64>() / (mf - 1.0)
    } else {
        0.0
    };
    let t = w + (1.0 + 1.0 / mf) * b;
    let lambda = (1.0 + 1.0 / mf) * b / t;
    let df = if lambda == 0.0 {
        nu_com
    } else {
        let old = (mf - 1.0) / (lambda * lambda);
        Some(match nu_com {
            None => old,
            Some(c) => {
                let obs = (c + 1.0) / (c + 3.0) * c * (1.0 - lambda);
                1.0 / (1.0 / old + 1.0 / obs)
            }
        })
    };
    let crit = match df {
        Some(v) => StudentsT::new(0.0, 1.0, v)
            .map(|d| d.inverse_cdf(0.5 + level / 2.0))
            .unwrap_or_else(|_| z_quantile(level)),
        None => z_quantile(level),
    };
    let half = crit * t.sqrt();
    Ok(PooledEstimate {
        m,
        q_bar,
        w,
        b,
        t,
        df,
        level,
        ci_or: ((q_bar - half).exp(), (q_bar + half).exp()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEffects {
    pub triple: EffectTriple,
    pub total: PooledEstimate,
    pub direct: PooledEstimate,
    pub indirect: PooledEstimate,
}

/// All completed datasets stacked, with a 1-based `imputation_id` column.
pub fn stack_imputations(datasets: &[Dataset]) -> Result<Dataset, ImputeError> {
    let Some(first) = datasets.first() else {
        return Err(ImputeError::NoEstimates);
    };
    let mut columns = vec![Column::new(
        "imputation_id",
        ColumnKind::Continuous,
        datasets
            .iter()
            .enumerate()
            .flat_map(|(i, d)| std::iter::repeat(Cell::Observed(Value::Num((i + 1) as f64))).take(d.n_rows()))
            .collect(),
    )?];
    for col in first.columns() {
        let mut cells = Vec::new();
        for d in datasets {
            cells.extend(d.column(&col.name)?.cells.iter().cloned());
        }
        columns.push(Column::new(col.name.clone(), col.kind.clone(), cells)?);
    }
    Ok(Dataset::new(columns, first.weight_column().map(str::to_string))?)
}

fn pooled_effect(kind: EffectKind, template: &EffectEstimate, p: &PooledEstimate, fingerprint: &str) -> EffectEstimate {
    EffectEstimate {
        kind,
        variant: template.variant,
        log_or: p.q_bar,
        or: p.q_bar.exp(),
        se: Some(p.t.sqrt()),
        ci_or: p.ci_or,
        ci_method: CiMethod::Rubin,
        n_used: template.n_used,
        data_fingerprint: fingerprint.to_string(),
    }
}

/// Effects pooled over already completed datasets. Total and direct use the
/// model standard errors; the indirect effect is pooled per dataset with a
/// bootstrap standard error. Dataset `i` bootstraps with seeds starting at
/// `seed + i * reps`.
pub fn mi_effects_from(
    datasets: &[Dataset],
    roles: &VariableRoles,
    estimator: &dyn EffectEstimator,
    level: f64,
    boot: &BootstrapConfig,
    nu_com: Option<f64>,
) -> Result<MiEffects, ImputeError> {
    if datasets.is_empty() {
        return Err(ImputeError::NoEstimates);
    }
    let mut totals = Vec::new();
    let mut directs = Vec::new();
    let mut indirects = Vec::new();
    let mut failures = 0;
    for (i, ds) in datasets.iter().enumerate() {
        let (t, d) = estimator.total_and_direct(ds, roles)?;
        let seed = boot.seed.wrapping_add((i * boot.reps) as u64);
        let reps = bootstrap_replicates(estimator, ds, roles, boot.reps, seed)?;
        failures += reps.failed;
        totals.push((t.log_or, t.se));
        directs.push((d.log_or, d.se));
        indirects.push((t.log_or - d.log_or, sample_sd(&reps.values(EffectKind::Indirect))));
    }
    let total = pool(&totals, nu_com, level)?;
    let direct = pool(&directs, nu_com, level)?;
    let indirect = pool(&indirects, nu_com, level)?;
    let fingerprint = stack_imputations(datasets)?.fingerprint();
    let template = EffectEstimate {
        kind: EffectKind::Total,
        variant: estimator.variant(),
        log_or: 0.0,
        or: 1.0,
        se: None,
        ci_or: (1.0, 1.0),
        ci_method: CiMethod::Rubin,
        n_used: datasets[0].n_rows(),
        data_fingerprint: String::new(),
    };
    let triple = EffectTriple {
        total: pooled_effect(EffectKind::Total, &template, &total, &fingerprint),
        direct: pooled_effect(EffectKind::Direct, &template, &direct, &fingerprint),
        indirect: pooled_effect(EffectKind::Indirect, &template, &indirect, &fingerprint),
        seed: boot.seed,
        bootstrap_reps: boot.reps,
        bootstrap_failures: failures,
    };
    Ok(MiEffects {
        triple,
        total,
        direct,
        indirect,
    })
}

pub fn mi_effects(
    ds: &Dataset,
    roles: &VariableRoles,
    cfg: &ImputationConfig,
    estimator: &dyn EffectEstimator,
    level: f64,
    boot: &BootstrapConfig,
) -> Result<MiEffects, ImputeError> {
    let completed = impute(ds, cfg)?;
    mi_effects_from(&completed, roles, estimator, level, boot, None)
}
