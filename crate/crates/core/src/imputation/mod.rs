//! Multiple imputation by chained equations with predictive mean matching,
//! and Rubin's rules for combining estimates across completed datasets.

mod pmm;
mod pool;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cell, Column, DataError, Dataset};
use crate::glm::GlmError;
use crate::mediation::MediationError;

pub use pool::{mi_effects, mi_effects_from, pool, stack_imputations, MiEffects, PooledEstimate};

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mediation(#[from] MediationError),
    #[error("invalid imputation config: {0}")]
    InvalidConfig(String),
    #[error("column `{0}` has no observed values to impute from")]
    AllMissing(String),
    #[error("column `{column}` has nonresponse at row {row}; nonresponse rows are excluded, not imputed")]
    Nonresponse { column: String, row: usize },
    #[error("imputation model for `{variable}` failed in cycle {cycle}: {source}")]
    Model {
        cycle: usize,
        variable: String,
        #[source]
        source: GlmError,
    },
    #[error("pooling needs at least one estimate")]
    NoEstimates,
    #[error("standard errors must be positive and finite, got {0}")]
    InvalidSe(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationConfig {
    pub m: usize,
    pub donors: usize,
    pub max_cycles: usize,
    pub seed: u64,
    /// Columns to impute, in visiting order; empty means every incomplete
    /// non-weight column in dataset order.
    pub variables_to_impute: Vec<String>,
    /// Fit the model used for the incomplete rows on a bootstrap resample of
    /// the observed rows, so that imputations reflect parameter uncertainty.
    pub parameter_draw: bool,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            m: 5,
            donors: 5,
            max_cycles: 10,
            seed: 0,
            variables_to_impute: Vec::new(),
            parameter_draw: true,
        }
    }
}

impl ImputationConfig {
    pub fn validate(&self) -> Result<(), ImputeError> {
        let bad = |s: &str| Err(ImputeError::InvalidConfig(s.to_string()));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if self.donors == 0 {
            return bad("donors must be at least 1");
        }
        if self.max_cycles == 0 {
            return bad("max_cycles must be at least 1");
        }
        Ok(())
    }
}

/// Indices of the columns to impute, in visiting order.
fn targets(ds: &Dataset, cfg: &ImputationConfig) -> Result<Vec<usize>, ImputeError> {
    let names: Vec<&str> = ds.column_names();
    let weight = ds.weight_column();
    let candidates: Vec<&str> = if cfg.variables_to_impute.is_empty() {
        names.iter().copied().filter(|n| Some(*n) != weight).collect()
    } else {
        cfg.variables_to_impute.iter().map(String::as_str).collect()
    };
    let mut out = Vec::new();
    for name in candidates {
        let col = ds.column(name)?;
        if Some(name) == weight {
            return Err(ImputeError::InvalidConfig(format!("weight column `{name}` cannot be imputed")));
        }
        if let Some(row) = col.cells.iter().position(|c| *c == Cell::Nonresponse) {
            return Err(ImputeError::Nonresponse {
                column: name.to_string(),
                row: row + 1,
            });
        }
        let missing = col.count_unobserved();
        if missing == 0 {
            continue;
        }
        if missing == col.len() {
            return Err(ImputeError::AllMissing(name.to_string()));
        }
        out.push(names.iter().position(|n| *n == name).unwrap());
    }
    Ok(out)
}

/// `m` completed copies of `ds`. Chain `i` is seeded with `seed + i`, so the
/// result does not depend on how chains are scheduled across threads. Every
/// imputed cell is copied from an observed cell of the same column.
pub fn impute(ds: &Dataset, cfg: &ImputationConfig) -> Result<Vec<Dataset>, ImputeError> {
    cfg.validate()?;
    let targets = targets(ds, cfg)?;
    if targets.is_empty() {
        return Ok(vec![ds.clone(); cfg.m]);
    }
    (0..cfg.m)
        .into_par_iter()
        .map(|chain| pmm::run_chain(ds, &targets, cfg, chain))
        .collect()
}

fn replace_cells(col: &Column, cells: Vec<Cell>) -> Column {
    Column {
        name: col.name.clone(),
        kind: col.kind.clone(),
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnKind, Value};

    fn with_gaps() -> Dataset {
        let x = Column::new(
            "x",
            ColumnKind::Continuous,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
                .into_iter()
                .enumerate()
                .map(|(i, v)| if i == 2 || i == 5 { Cell::Missing } else { Cell::Observed(Value::Num(v)) })
                .collect(),
        )
        .unwrap();
        let g = Column::from_labels(
            "g",
            ColumnKind::categorical(["a", "b", "c"], "a"),
            &[Some("a"), Some("b"), None, Some("c"), Some("a"), Some("b"), Some("c"), None],
        )
        .unwrap();
        let z = Column::continuous("z", &[0.1, 0.5, 0.2, 0.9, 0.3, 0.8, 0.4, 0.6]).unwrap();
        Dataset::new(vec![x, g, z], None).unwrap()
    }

    #[test]
    fn complete_data_is_copied() {
        let ds = Dataset::new(vec![Column::continuous("z", &[1.0, 2.0]).unwrap()], None).unwrap();
        let out = impute(&ds, &ImputationConfig::default()).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|d| *d == ds));
    }

    #[test]
    fn imputed_values_come_from_observed() {
        let ds = with_gaps();
        let out = impute(&ds, &ImputationConfig::default()).unwrap();
        for d in &out {
            for name in ["x", "g"] {
                let orig = ds.column(name).unwrap();
                let col = d.column(name).unwrap();
                assert_eq!(col.count_unobserved(), 0);
                for r in 0..col.len() {
                    assert!(orig.cells.contains(&col.cells[r]));
                    if orig.cells[r].is_observed() {
                        assert_eq!(orig.cells[r], col.cells[r]);
                    }
                }
            }
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let ds = with_gaps();
        let cfg = ImputationConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(impute(&ds, &cfg).unwrap(), impute(&ds, &cfg).unwrap());
    }

    #[test]
    fn errors() {
        let all_missing = Column::new("x", ColumnKind::Continuous, vec![Cell::Missing; 3]).unwrap();
        let ds = Dataset::new(vec![all_missing, Column::continuous("z", &[1.0, 2.0, 3.0]).unwrap()], None).unwrap();
        assert!(matches!(impute(&ds, &ImputationConfig::default()), Err(ImputeError::AllMissing(_))));

        let nr = Column::new(
            "x",
            ColumnKind::Continuous,
            vec![Cell::Nonresponse, Cell::Observed(Value::Num(1.0)), Cell::Missing],
        )
        .unwrap();
        let ds = Dataset::new(vec![nr], None).unwrap();
        assert!(matches!(
            impute(&ds, &ImputationConfig::default()),
            Err(ImputeError::Nonresponse { row: 1, .. })
        ));

        let cfg = ImputationConfig {
            m: 0,
            ..Default::default()
        };
        assert!(matches!(impute(&with_gaps(), &cfg), Err(ImputeError::InvalidConfig(_))));
    }
}
