use serde::{Deserialize, Serialize};

use super::{Cell, DataError, Dataset, VariableRoles};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Drop rows with any missing or non-response cell among the role columns.
    CompleteCase,
    /// Drop non-response rows only; missing cells are left for imputation.
    KeepMissingForImputation,
}

/// Rows removed, by reason. A row with both a non-response and a missing
/// cell counts as non-response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub input_rows: usize,
    pub nonresponse: usize,
    pub missing: usize,
    pub retained: usize,
}

pub fn filter_analysis_rows(
    ds: &Dataset,
    roles: &VariableRoles,
    policy: MissingPolicy,
) -> Result<(Dataset, ExclusionCounts), DataError> {
    roles.validate(ds)?;
    let cols: Vec<_> = roles
        .analysis_columns()
        .into_iter()
        .map(|c| ds.column(c))
        .collect::<Result<_, _>>()?;
    let mut counts = ExclusionCounts {
        input_rows: ds.n_rows(),
        ..Default::default()
    };
    let mut keep = Vec::with_capacity(ds.n_rows());
    for r in 0..ds.n_rows() {
        let nonresp = cols.iter().any(|c| c.cells[r] == Cell::Nonresponse);
        let missing = cols.iter().any(|c| c.cells[r] == Cell::Missing);
        if nonresp {
            counts.nonresponse += 1;
        } else if missing && policy == MissingPolicy::CompleteCase {
            counts.missing += 1;
        } else {
            keep.push(r);
        }
    }
    if keep.is_empty() {
        return Err(DataError::NoRows);
    }
    counts.retained = keep.len();
    if keep.len() == ds.n_rows() {
        return Ok((ds.clone(), counts));
    }
    Ok((ds.take_rows(&keep)?, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, ColumnKind};

    fn roles() -> VariableRoles {
        VariableRoles {
            exposure: "q".into(),
            outcome: "y".into(),
            baseline: Some("x".into()),
            mediators: vec![],
            covariates: vec![],
            survey_year: None,
        }
    }

    fn ten_rows(q_cells: Vec<Cell>, x: Vec<Cell>) -> Dataset {
        let y = Column::indicator("y", &[true, false, true, false, true, false, true, false, true, false]).unwrap();
        Dataset::new(
            vec![
                Column::new("q", ColumnKind::indicator(), q_cells).unwrap(),
                y,
                Column::new("x", ColumnKind::Continuous, x).unwrap(),
            ],
            None,
        )
        .unwrap()
    }

    fn obs_level(i: usize) -> Cell {
        Cell::Observed(crate::data::Value::Level(i))
    }

    fn obs_num(v: f64) -> Cell {
        Cell::Observed(crate::data::Value::Num(v))
    }

    #[test]
    fn nonresponse_rows_counted() {
        let mut q: Vec<Cell> = (0..10).map(|i| obs_level(i % 2)).collect();
        q[3] = Cell::Nonresponse;
        q[7] = Cell::Nonresponse;
        let x = (0..10).map(|i| obs_num(i as f64)).collect();
        let (out, counts) = filter_analysis_rows(&ten_rows(q, x), &roles(), MissingPolicy::CompleteCase).unwrap();
        assert_eq!(out.n_rows(), 8);
        assert_eq!(counts.nonresponse, 2);
        assert_eq!(counts.missing, 0);
    }

    #[test]
    fn nothing_missing_is_identity() {
        let q = (0..10).map(|i| obs_level(i % 2)).collect();
        let x = (0..10).map(|i| obs_num(i as f64)).collect();
        let ds = ten_rows(q, x);
        let (out, counts) = filter_analysis_rows(&ds, &roles(), MissingPolicy::CompleteCase).unwrap();
        assert_eq!(out, ds);
        assert_eq!(counts.retained, 10);
    }

    #[test]
    fn keep_missing_drops_only_nonresponse() {
        let mut q: Vec<Cell> = (0..10).map(|i| obs_level(i % 2)).collect();
        q[0] = Cell::Nonresponse;
        let mut x: Vec<Cell> = (0..10).map(|i| obs_num(i as f64)).collect();
        x[1] = Cell::Missing;
        x[0] = Cell::Missing;
        let ds = ten_rows(q, x);
        let (out, counts) = filter_analysis_rows(&ds, &roles(), MissingPolicy::KeepMissingForImputation).unwrap();
        assert_eq!(out.n_rows(), 9);
        assert_eq!(counts.nonresponse, 1);
        assert_eq!(out.column("x").unwrap().cells[0], Cell::Missing);
        let (cc, counts) = filter_analysis_rows(&ds, &roles(), MissingPolicy::CompleteCase).unwrap();
        assert_eq!(cc.n_rows(), 8);
        assert_eq!((counts.nonresponse, counts.missing), (1, 1));
    }

    #[test]
    fn empty_result_is_an_error() {
        let q = vec![Cell::Nonresponse; 10];
        let x = (0..10).map(|i| obs_num(i as f64)).collect();
        let err = filter_analysis_rows(&ten_rows(q, x), &roles(), MissingPolicy::CompleteCase).unwrap_err();
        assert!(matches!(err, DataError::NoRows));
    }
}
