use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FitOptions, GlmError};
use crate::data::{Column, ColumnKind, DataError, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Main(String),
    /// Product of the exposure indicator and the (centered) column.
    Interaction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    None,
    Column(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: String,
    /// `None` for models without an exposure slot, e.g. the propensity model.
    pub exposure: Option<String>,
    pub terms: Vec<Term>,
    pub center_covariates: bool,
    pub weight_source: WeightSource,
    pub max_iter: usize,
    pub tol: f64,
}

impl ModelSpec {
    pub fn new(outcome: &str, exposure: Option<&str>) -> Self {
        let defaults = FitOptions::default();
        ModelSpec {
            outcome: outcome.to_string(),
            exposure: exposure.map(str::to_string),
            terms: Vec::new(),
            center_covariates: false,
            weight_source: WeightSource::None,
            max_iter: defaults.max_iter,
            tol: defaults.tol,
        }
    }

    pub fn main(mut self, column: &str) -> Self {
        self.terms.push(Term::Main(column.to_string()));
        self
    }

    pub fn interaction(mut self, column: &str) -> Self {
        self.terms.push(Term::Interaction(column.to_string()));
        self
    }

    pub fn centered(mut self, yes: bool) -> Self {
        self.center_covariates = yes;
        self
    }

    pub fn weights(mut self, source: WeightSource) -> Self {
        self.weight_source = source;
        self
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            ..FitOptions::default()
        }
    }

    pub fn validate(&self) -> Result<(), GlmError> {
        let bad = |m: String| Err(GlmError::InvalidSpec(m));
        if !(self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        for t in &self.terms {
            let (Term::Main(c) | Term::Interaction(c)) = t;
            if *c == self.outcome {
                return bad(format!("outcome `{c}` cannot also be a term"));
            }
            if Some(c) == self.exposure.as_ref() {
                return bad(format!("exposure `{c}` is already in the model"));
            }
            if matches!(t, Term::Interaction(_)) && self.exposure.is_none() {
                return bad(format!("interaction with `{c}` needs an exposure"));
            }
        }
        Ok(())
    }
}

/// n x p design with an intercept in column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    /// Subtracted (weighted) means, by design column name.
    pub offsets: IndexMap<String, f64>,
    /// Indicator columns that are all zero (a level absent from the data).
    pub empty_columns: Vec<String>,
}

impl DesignMatrix {
    /// Builds a design from named columns, prepending the intercept.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, n: usize) -> Result<Self, GlmError> {
        let p = columns.len() + 1;
        let mut x = DMatrix::from_element(n, p, 1.0);
        let mut names = vec!["(intercept)".to_string()];
        let mut empty_columns = Vec::new();
        for (j, (name, values)) in columns.into_iter().enumerate() {
            if values.len() != n {
                return Err(GlmError::InvalidInput(format!("column `{name}` has {} rows, expected {n}", values.len())));
            }
            if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
                return Err(GlmError::InvalidInput(format!("non-finite value in `{name}` at row {}", bad + 1)));
            }
            if values.iter().all(|&v| v == 0.0) {
                empty_columns.push(name.clone());
            }
            x.set_column(j + 1, &nalgebra::DVector::from_vec(values));
            names.push(name);
        }
        Ok(DesignMatrix {
            x,
            names,
            offsets: IndexMap::new(),
            empty_columns,
        })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows in the given order (indices may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            x: self.x.select_rows(rows),
            names: self.names.clone(),
            offsets: self.offsets.clone(),
            empty_columns: self.empty_columns.clone(),
        }
    }
}

/// Reference-coded numeric columns for one data column: a continuous column
/// as itself, a binary column as its indicator, a categorical column as one
/// indicator per non-reference level named `column[level]`.
pub fn encode_column(col: &Column) -> Result<Vec<(String, Vec<f64>)>, DataError> {
    let n_bad = col.count_unobserved();
    if n_bad > 0 {
        return Err(DataError::IncompleteColumn {
            column: col.name.clone(),
            count: n_bad,
        });
    }
    let n = col.len();
    Ok(match &col.kind {
        ColumnKind::Continuous => vec![(col.name.clone(), (0..n).map(|r| col.numeric(r).unwrap()).collect())],
        ColumnKind::Binary { levels, reference } => {
            let other = levels.iter().find(|l| *l != reference).unwrap();
            vec![(format!("{}[{other}]", col.name), (0..n).map(|r| col.numeric(r).unwrap()).collect())]
        }
        ColumnKind::Categorical { levels, .. } => {
            let reference = col.kind.reference_index().unwrap();
            levels
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != reference)
                .map(|(i, l)| {
                    let v = (0..n).map(|r| if col.level(r) == Some(i) { 1.0 } else { 0.0 }).collect();
                    (format!("{}[{l}]", col.name), v)
                })
                .collect()
        }
    })
}

pub fn resolve_weights(ds: &Dataset, source: &WeightSource) -> Result<Vec<f64>, GlmError> {
    match source {
        WeightSource::None => Ok(vec![1.0; ds.n_rows()]),
        WeightSource::Column(name) => {
            let w = ds.column(name)?.numeric_complete()?;
            if let Some(bad) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(GlmError::InvalidInput(format!("weight at row {} is not finite and non-negative", bad + 1)));
            }
            Ok(w)
        }
    }
}

/// 0/1 response vector from a binary column.
pub fn response(ds: &Dataset, outcome: &str) -> Result<Vec<f64>, GlmError> {
    let col = ds.column(outcome)?;
    if !col.kind.is_binary() {
        return Err(DataError::WrongKind {
            column: outcome.to_string(),
            expected: "binary".into(),
        }
        .into());
    }
    Ok(col.numeric_complete()?)
}

fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    if sw > 0.0 {
        v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
    } else {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

pub fn build_design(ds: &Dataset, spec: &ModelSpec) -> Result<DesignMatrix, GlmError> {
    spec.validate()?;
    let weights = resolve_weights(ds, &spec.weight_source)?;
    ds.column(&spec.outcome)?;
    let exposure = match &spec.exposure {
        Some(e) => {
            let col = ds.column(e)?;
            if !col.kind.is_binary() {
                return Err(DataError::WrongKind {
                    column: e.clone(),
                    expected: "binary".into(),
                }
                .into());
            }
            Some((e.clone(), col.numeric_complete()?))
        }
        None => None,
    };
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut offsets = IndexMap::new();
    if let Some((name, q)) = &exposure {
        columns.push((name.clone(), q.clone()));
    }
    let mut encode = |column: &str| -> Result<Vec<(String, Vec<f64>)>, GlmError> {
        let mut blocks = encode_column(ds.column(column)?)?;
        if spec.center_covariates {
            for (name, v) in blocks.iter_mut() {
                let m = weighted_mean(v, &weights);
                v.iter_mut().for_each(|x| *x -= m);
                offsets.insert(name.clone(), m);
            }
        }
        Ok(blocks)
    };
    for term in &spec.terms {
        match term {
            Term::Main(c) => columns.extend(encode(c)?),
            Term::Interaction(c) => {
                let (qname, q) = exposure.as_ref().expect("validated");
                for (name, v) in encode(c)? {
                    let prod = v.iter().zip(q).map(|(a, b)| a * b).collect();
                    columns.push((format!("{qname}:{name}"), prod));
                }
            }
        }
    }
    let mut design = DesignMatrix::from_columns(columns, ds.n_rows())?;
    design.offsets = offsets;
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centering_subtracts_the_mean() {
        let ds = Dataset::new(
            vec![
                Column::indicator("y", &[true, false, true]).unwrap(),
                Column::continuous("x", &[1.0, 2.0, 3.0]).unwrap(),
            ],
            None,
        )
        .unwrap();
        let d = build_design(&ds, &ModelSpec::new("y", None).main("x").centered(true)).unwrap();
        assert_eq!(d.x.column(1).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(d.offsets["x"], 2.0);
        assert!(d.x.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weighted_centering_has_zero_weighted_mean() {
        let ds = Dataset::new(
            vec![
                Column::indicator("y", &[true, false, true, false]).unwrap(),
                Column::continuous("x", &[1.0, 2.0, 7.0, 3.5]).unwrap(),
                Column::continuous("w", &[1.0, 3.0, 0.5, 2.0]).unwrap(),
            ],
            Some("w".into()),
        )
        .unwrap();
        let spec = ModelSpec::new("y", None)
            .main("x")
            .centered(true)
            .weights(WeightSource::Column("w".into()));
        let d = build_design(&ds, &spec).unwrap();
        let w = ds.weights();
        let m: f64 = d.x.column(1).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        assert!(m.abs() < 1e-10);
    }

    #[test]
    fn interaction_is_elementwise_product() {
        let ds = Dataset::new(
            vec![
                Column::indicator("y", &[true, false]).unwrap(),
                Column::indicator("q", &[true, false]).unwrap(),
                Column::continuous("x", &[0.5, -0.5]).unwrap(),
            ],
            None,
        )
        .unwrap();
        let d = build_design(&ds, &ModelSpec::new("y", Some("q")).interaction("x")).unwrap();
        assert_eq!(d.names, vec!["(intercept)", "q", "q:x"]);
        assert_eq!(d.x.column(2).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0]);
    }

    #[test]
    fn race_reference_coding() {
        let kind = ColumnKind::categorical(["Asian", "Black", "White"], "White");
        let race = Column::from_labels("race", kind, &[Some("Asian"), Some("White"), Some("Black")]).unwrap();
        let blocks = encode_column(&race).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].0, "race[Asian]");
        assert_eq!(blocks[1].0, "race[Black]");
        // row 0 is Asian: Asian=1, others 0
        assert_eq!((blocks[0].1[0], blocks[1].1[0]), (1.0, 0.0));
        assert_eq!((blocks[0].1[1], blocks[1].1[1]), (0.0, 0.0));
        assert_eq!((blocks[0].1[2], blocks[1].1[2]), (0.0, 1.0));
    }

    #[test]
    fn absent_level_is_flagged_not_rejected() {
        let kind = ColumnKind::categorical(["a", "b", "c"], "a");
        let ds = Dataset::new(
            vec![
                Column::indicator("y", &[true, false]).unwrap(),
                Column::from_labels("g", kind, &[Some("a"), Some("b")]).unwrap(),
            ],
            None,
        )
        .unwrap();
        let d = build_design(&ds, &ModelSpec::new("y", None).main("g")).unwrap();
        assert_eq!(d.empty_columns, vec!["g[c]".to_string()]);
    }

    #[test]
    fn missing_cells_rejected() {
        let ds = Dataset::new(
            vec![
                Column::indicator("y", &[true, false]).unwrap(),
                Column::new("x", ColumnKind::Continuous, vec![crate::data::Cell::Missing, crate::data::Cell::Observed(crate::data::Value::Num(1.0))]).unwrap(),
            ],
            None,
        )
        .unwrap();
        assert!(matches!(
            build_design(&ds, &ModelSpec::new("y", None).main("x")),
            Err(GlmError::Data(DataError::IncompleteColumn { .. }))
        ));
    }

    #[test]
    fn spec_invariants() {
        assert!(ModelSpec::new("y", None).main("y").validate().is_err());
        assert!(ModelSpec::new("y", None).interaction("x").validate().is_err());
        let mut s = ModelSpec::new("y", Some("q"));
        s.tol = 0.0;
        assert!(s.validate().is_err());
    }
}
