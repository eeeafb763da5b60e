//! Tabular data with typed columns, per-cell observation state and optional
//! analysis weights.

mod csv_io;
mod describe;
mod filter;
mod recode;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use csv_io::{ingest_csv, read_csv, write_csv, IngestOptions, Schema, WriteOptions};
pub use describe::{describe, DescribeOptions, DescriptiveRow, DescriptiveTable};
pub use filter::{filter_analysis_rows, ExclusionCounts, MissingPolicy};
pub use recode::{recode, RecodeRule, RecodeRuleSet, RecodeTarget};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("header mismatch: column `{0}` declared in schema but absent from header")]
    MissingHeaderColumn(String),
    /// `row` is the 1-based data row (the header is not counted).
    #[error("row {row}, column `{column}`: cannot parse `{value}` as {expected}")]
    Parse {
        row: usize,
        column: String,
        value: String,
        expected: String,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("invalid column kind for `{column}`: {reason}")]
    InvalidKind { column: String, reason: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` has {len} cells, expected {expected}")]
    LengthMismatch {
        column: String,
        len: usize,
        expected: usize,
    },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("invalid weight in column `{column}` at row {row}: {reason}")]
    InvalidWeight {
        column: String,
        row: usize,
        reason: String,
    },
    #[error("column `{column}` must be {expected}")]
    WrongKind { column: String, expected: String },
    #[error("column `{column}` has {count} missing or non-response cells")]
    IncompleteColumn { column: String, count: usize },
    #[error("recode of `{column}`: unmapped labels {labels:?}")]
    UnmappedLabels { column: String, labels: Vec<String> },
    #[error("invalid recode rule for `{column}`: {reason}")]
    InvalidRule { column: String, reason: String },
    #[error("no analyzable rows remain after filtering")]
    NoRows,
    #[error("row index {0} out of range")]
    RowOutOfRange(usize),
}

/// Declared type of a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical {
        levels: Vec<String>,
        reference: String,
    },
    /// Two levels; the indicator is 1 for the non-reference level.
    Binary {
        levels: Vec<String>,
        reference: String,
    },
}

impl ColumnKind {
    pub fn categorical<S: Into<String>>(levels: impl IntoIterator<Item = S>, reference: &str) -> Self {
        ColumnKind::Categorical {
            levels: levels.into_iter().map(Into::into).collect(),
            reference: reference.to_string(),
        }
    }

    pub fn binary(reference: &str, other: &str) -> Self {
        ColumnKind::Binary {
            levels: vec![reference.to_string(), other.to_string()],
            reference: reference.to_string(),
        }
    }

    /// Binary column coded `0`/`1` with reference `0`.
    pub fn indicator() -> Self {
        Self::binary("0", "1")
    }

    pub fn levels(&self) -> Option<&[String]> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Categorical { levels, .. } | ColumnKind::Binary { levels, .. } => {
                Some(levels)
            }
        }
    }

    pub fn reference(&self) -> Option<&str> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Categorical { reference, .. } | ColumnKind::Binary { reference, .. } => {
                Some(reference)
            }
        }
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels()?.iter().position(|l| l == label)
    }

    pub fn reference_index(&self) -> Option<usize> {
        self.level_index(self.reference()?)
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, ColumnKind::Binary { .. })
    }

    pub fn validate(&self, column: &str) -> Result<(), DataError> {
        let invalid = |reason: &str| DataError::InvalidKind {
            column: column.to_string(),
            reason: reason.to_string(),
        };
        let Some(levels) = self.levels() else {
            return Ok(());
        };
        if levels.is_empty() {
            return Err(invalid("levels must be non-empty"));
        }
        for (i, l) in levels.iter().enumerate() {
            if levels[..i].contains(l) {
                return Err(invalid(&format!("duplicate level `{l}`")));
            }
        }
        if self.reference_index().is_none() {
            return Err(invalid("reference label is not one of the levels"));
        }
        if self.is_binary() && levels.len() != 2 {
            return Err(invalid("binary columns need exactly two levels"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    /// Index into the column's level list.
    Level(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Observed(Value),
    Missing,
    Nonresponse,
}

impl Cell {
    pub fn is_observed(&self) -> bool {
        matches!(self, Cell::Observed(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub cells: Vec<Cell>,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind, cells: Vec<Cell>) -> Result<Self, DataError> {
        let name = name.into();
        kind.validate(&name)?;
        if let Some(levels) = kind.levels() {
            for (row, c) in cells.iter().enumerate() {
                match c {
                    Cell::Observed(Value::Level(i)) if *i < levels.len() => {}
                    Cell::Observed(Value::Level(i)) => {
                        return Err(DataError::Parse {
                            row: row + 1,
                            column: name,
                            value: format!("level #{i}"),
                            expected: "a declared level".into(),
                        })
                    }
                    Cell::Observed(Value::Num(v)) => {
                        return Err(DataError::Parse {
                            row: row + 1,
                            column: name,
                            value: v.to_string(),
                            expected: "a level".into(),
                        })
                    }
                    _ => {}
                }
            }
        } else {
            for (row, c) in cells.iter().enumerate() {
                match c {
                    Cell::Observed(Value::Num(v)) if v.is_finite() => {}
                    Cell::Missing | Cell::Nonresponse => {}
                    other => {
                        return Err(DataError::Parse {
                            row: row + 1,
                            column: name,
                            value: format!("{other:?}"),
                            expected: "a finite number".into(),
                        })
                    }
                }
            }
        }
        Ok(Column { name, kind, cells })
    }

    /// Continuous column from plain numbers, all observed.
    pub fn continuous(name: impl Into<String>, values: &[f64]) -> Result<Self, DataError> {
        let cells = values.iter().map(|&v| Cell::Observed(Value::Num(v))).collect();
        Column::new(name, ColumnKind::Continuous, cells)
    }

    /// Column from labels; `None` is a missing cell.
    pub fn from_labels(
        name: impl Into<String>,
        kind: ColumnKind,
        labels: &[Option<&str>],
    ) -> Result<Self, DataError> {
        let name = name.into();
        kind.validate(&name)?;
        let mut cells = Vec::with_capacity(labels.len());
        for (row, l) in labels.iter().enumerate() {
            cells.push(match l {
                None => Cell::Missing,
                Some(l) => Cell::Observed(Value::Level(kind.level_index(l).ok_or_else(|| {
                    DataError::Parse {
                        row: row + 1,
                        column: name.clone(),
                        value: l.to_string(),
                        expected: "a declared level".into(),
                    }
                })?)),
            });
        }
        Column::new(name, kind, cells)
    }

    /// 0/1 indicator column from booleans.
    pub fn indicator(name: impl Into<String>, values: &[bool]) -> Result<Self, DataError> {
        let cells = values
            .iter()
            .map(|&b| Cell::Observed(Value::Level(usize::from(b))))
            .collect();
        Column::new(name, ColumnKind::indicator(), cells)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Numeric reading of an observed cell. Binary columns read as their
    /// non-reference indicator, categorical columns as their level index.
    pub fn numeric(&self, row: usize) -> Option<f64> {
        match self.cells[row] {
            Cell::Observed(Value::Num(v)) => Some(v),
            Cell::Observed(Value::Level(i)) => match &self.kind {
                ColumnKind::Binary { .. } => {
                    Some(if Some(i) == self.kind.reference_index() { 0.0 } else { 1.0 })
                }
                _ => Some(i as f64),
            },
            _ => None,
        }
    }

    pub fn level(&self, row: usize) -> Option<usize> {
        match self.cells[row] {
            Cell::Observed(Value::Level(i)) => Some(i),
            _ => None,
        }
    }

    /// Text form of an observed cell (`None` for missing/non-response).
    pub fn label(&self, row: usize) -> Option<String> {
        match self.cells[row] {
            Cell::Observed(Value::Num(v)) => Some(format_number(v)),
            Cell::Observed(Value::Level(i)) => self.kind.levels().map(|l| l[i].clone()),
            _ => None,
        }
    }

    pub fn count_unobserved(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_observed()).count()
    }

    /// Observed numeric readings; error if any cell is unobserved.
    pub fn numeric_complete(&self) -> Result<Vec<f64>, DataError> {
        let n_bad = self.count_unobserved();
        if n_bad > 0 {
            return Err(DataError::IncompleteColumn {
                column: self.name.clone(),
                count: n_bad,
            });
        }
        Ok((0..self.len()).map(|r| self.numeric(r).unwrap()).collect())
    }

    fn take(&self, rows: &[usize]) -> Column {
        Column {
            name: self.name.clone(),
            kind: self.kind.clone(),
            cells: rows.iter().map(|&r| self.cells[r]).collect(),
        }
    }
}

pub(crate) fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Immutable table of equally long columns plus an optional weight column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: IndexMap<String, Column>,
    weight_column: Option<String>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, weight_column: Option<String>) -> Result<Self, DataError> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut map = IndexMap::with_capacity(columns.len());
        for c in columns {
            if c.len() != n_rows {
                return Err(DataError::LengthMismatch {
                    column: c.name.clone(),
                    len: c.len(),
                    expected: n_rows,
                });
            }
            if map.contains_key(&c.name) {
                return Err(DataError::DuplicateColumn(c.name));
            }
            map.insert(c.name.clone(), c);
        }
        let ds = Dataset {
            columns: map,
            weight_column,
            n_rows,
        };
        ds.check_weights()?;
        Ok(ds)
    }

    fn check_weights(&self) -> Result<(), DataError> {
        let Some(name) = &self.weight_column else {
            return Ok(());
        };
        let col = self.column(name)?;
        if col.kind != ColumnKind::Continuous {
            return Err(DataError::WrongKind {
                column: name.clone(),
                expected: "continuous (weights)".into(),
            });
        }
        for (row, c) in col.cells.iter().enumerate() {
            let bad = |reason: &str| DataError::InvalidWeight {
                column: name.clone(),
                row,
                reason: reason.to_string(),
            };
            match c {
                Cell::Observed(Value::Num(v)) if v.is_finite() && *v >= 0.0 => {}
                Cell::Observed(_) => return Err(bad("weights must be finite and non-negative")),
                _ => return Err(bad("weights cannot be missing")),
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.columns
            .get(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.values()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.keys().map(String::as_str).collect()
    }

    pub fn weight_column(&self) -> Option<&str> {
        self.weight_column.as_deref()
    }

    /// Analysis weights; all ones when no weight column is set.
    pub fn weights(&self) -> Vec<f64> {
        match &self.weight_column {
            Some(w) => self.columns[w.as_str()]
                .cells
                .iter()
                .map(|c| match c {
                    Cell::Observed(Value::Num(v)) => *v,
                    _ => unreachable!("weights validated at construction"),
                })
                .collect(),
            None => vec![1.0; self.n_rows],
        }
    }

    pub fn without_weights(&self) -> Dataset {
        Dataset {
            weight_column: None,
            ..self.clone()
        }
    }

    pub fn with_weight_column(&self, name: Option<&str>) -> Result<Dataset, DataError> {
        let ds = Dataset {
            weight_column: name.map(str::to_string),
            ..self.clone()
        };
        ds.check_weights()?;
        Ok(ds)
    }

    /// Adds a column, or replaces the column with the same name in place.
    pub fn with_column(&self, column: Column) -> Result<Dataset, DataError> {
        if column.len() != self.n_rows {
            return Err(DataError::LengthMismatch {
                column: column.name.clone(),
                len: column.len(),
                expected: self.n_rows,
            });
        }
        let mut columns = self.columns.clone();
        columns.insert(column.name.clone(), column);
        let ds = Dataset {
            columns,
            weight_column: self.weight_column.clone(),
            n_rows: self.n_rows,
        };
        ds.check_weights()?;
        Ok(ds)
    }

    /// Rows in the given order; indices may repeat (bootstrap resampling).
    pub fn take_rows(&self, rows: &[usize]) -> Result<Dataset, DataError> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows) {
            return Err(DataError::RowOutOfRange(bad));
        }
        Ok(Dataset {
            columns: self
                .columns
                .iter()
                .map(|(k, c)| (k.clone(), c.take(rows)))
                .collect(),
            weight_column: self.weight_column.clone(),
            n_rows: rows.len(),
        })
    }

    /// Short content hash used to check that two estimates share their data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in self.columns.values() {
            h.update(c.name.as_bytes());
            h.update([0u8]);
            for cell in &c.cells {
                match cell {
                    Cell::Observed(Value::Num(v)) => {
                        h.update([1u8]);
                        h.update(v.to_le_bytes());
                    }
                    Cell::Observed(Value::Level(i)) => {
                        h.update([2u8]);
                        h.update((*i as u64).to_le_bytes());
                    }
                    Cell::Missing => h.update([3u8]),
                    Cell::Nonresponse => h.update([4u8]),
                }
            }
        }
        if let Some(w) = &self.weight_column {
            h.update(w.as_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Column roles for the mediation analysis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableRoles {
    pub exposure: String,
    pub outcome: String,
    /// Baseline support, measured before exposure disclosure.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub mediators: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub survey_year: Option<String>,
}

impl VariableRoles {
    pub fn validate(&self, ds: &Dataset) -> Result<(), DataError> {
        for name in self.analysis_columns() {
            ds.column(name)?;
        }
        for name in [&self.exposure, &self.outcome] {
            if !ds.column(name)?.kind.is_binary() {
                return Err(DataError::WrongKind {
                    column: name.clone(),
                    expected: "binary".into(),
                });
            }
        }
        Ok(())
    }

    /// Baseline support, covariates and survey year: the confounder set.
    pub fn adjustment_columns(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.baseline.iter().map(String::as_str).collect();
        v.extend(self.covariates.iter().map(String::as_str));
        v.extend(self.survey_year.as_deref());
        v
    }

    /// Every column that takes part in the analysis, outcome first.
    pub fn analysis_columns(&self) -> Vec<&str> {
        let mut v = vec![self.outcome.as_str(), self.exposure.as_str()];
        v.extend(self.baseline.as_deref());
        v.extend(self.mediators.iter().map(String::as_str));
        v.extend(self.covariates.iter().map(String::as_str));
        v.extend(self.survey_year.as_deref());
        v
    }
}
