//! Structural causal models over discrete variables, with exact enumeration
//! of observational and interventional quantities.
//!
//! A spec lists variables in topological order. Each variable has a parent
//! list and one mechanism: a conditional probability table, a logistic
//! response (binary variables) or a linear-Gaussian response (continuous
//! variables, sampling only).
//!
//! ```toml
//! [[variables]]
//! name = "Q"
//! mechanism = { type = "cpt", rows = [[0.6, 0.4]] }
//!
//! [[variables]]
//! name = "Y"
//! parents = ["Q"]
//! mechanism = { type = "logistic", intercept = -1.0, coefficients = { Q = 0.8 } }
//!
//! [roles]
//! exposure = "Q"
//! mediator = "M"
//! outcome = "Y"
//! baseline = ["X"]
//! ```
//!
//! CPT rows are ordered by parent configuration with the last parent varying
//! fastest. Logistic and linear coefficients are keyed by parent name, or by
//! `parent[label]` for the indicator of one level of a categorical parent.

mod enumerate;
mod random;
mod sample;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::glm::sigmoid;

pub use enumerate::{
    counterfactual_check, enumerate_joint, oracle_estimands, CounterfactualCell, CounterfactualReport, JointTable,
    OracleEstimands, StandardizedContrast, StratumEstimands,
};
pub use random::{random_mediation_scm, RandomScmOptions};
pub use sample::{replay, sample, sample_units, SampledUnits};

/// Largest joint state space that [`enumerate_joint`] will build.
pub const MAX_CELLS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("cannot parse SCM spec: {0}")]
    Parse(String),
    #[error("variable `{0}` is declared twice")]
    Duplicate(String),
    #[error("variable `{variable}`: parent `{parent}` is not declared before it")]
    UnknownParent { variable: String, parent: String },
    #[error("variable `{variable}`: {reason}")]
    InvalidVariable { variable: String, reason: String },
    #[error("variable `{variable}`, CPT row {row}: {reason}")]
    InvalidCpt { variable: String, row: usize, reason: String },
    #[error("variable `{0}` is continuous; enumeration needs discrete variables")]
    Continuous(String),
    #[error("joint state space has {0} cells, more than the limit of {MAX_CELLS}")]
    TooLarge(usize),
    #[error("roles are required for this operation")]
    MissingRoles,
    #[error("role `{role}` names unknown or unsuitable variable `{variable}`")]
    InvalidRole { role: String, variable: String },
    #[error("positivity violated: Pr({0}) = 0")]
    Positivity(String),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mechanism {
    Cpt {
        rows: Vec<Vec<f64>>,
    },
    Logistic {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        coefficients: IndexMap<String, f64>,
    },
    Linear {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        coefficients: IndexMap<String, f64>,
        sd: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    /// Level labels; defaults to "0", "1", ... for `levels` (default 2) levels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub latent: bool,
    pub mechanism: Mechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmRoles {
    pub exposure: String,
    pub mediator: String,
    pub outcome: String,
    #[serde(default)]
    pub baseline: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub variables: Vec<VariableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<ScmRoles>,
}

impl ScmSpec {
    pub fn from_toml(text: &str) -> Result<Self, ScmError> {
        toml::from_str(text).map_err(|e| ScmError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn compile(&self) -> Result<CompiledScm, ScmError> {
        CompiledScm::new(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Kind {
    /// `table[parent_config][level]`.
    Discrete { table: Vec<Vec<f64>> },
    Linear { intercept: f64, terms: Vec<Term>, sd: f64 },
}

/// One regression term: parent index, optional level indicator, coefficient.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Term {
    parent: usize,
    level: Option<usize>,
    coef: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CompiledVar {
    pub name: String,
    pub labels: Vec<String>,
    pub parents: Vec<usize>,
    pub latent: bool,
    pub kind: Kind,
}

impl CompiledVar {
    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, Kind::Discrete { .. })
    }

    pub fn n_levels(&self) -> usize {
        self.labels.len()
    }
}

/// Validated spec with every discrete mechanism expanded to a table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledScm {
    pub(crate) vars: Vec<CompiledVar>,
    pub(crate) roles: Option<ResolvedRoles>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ResolvedRoles {
    pub exposure: usize,
    pub mediator: usize,
    pub outcome: usize,
    pub baseline: Vec<usize>,
}

/// Discrete parents enter as their level index (0/1 for binary ones) or as
/// a level indicator; continuous parents as their value.
pub(crate) fn linear_predictor(intercept: f64, terms: &[Term], values: &[f64]) -> f64 {
    intercept
        + terms
            .iter()
            .map(|t| {
                let v = values[t.parent];
                t.coef * t.level.map_or(v, |l| (v as usize == l) as u8 as f64)
            })
            .sum::<f64>()
}

impl CompiledScm {
    fn new(spec: &ScmSpec) -> Result<Self, ScmError> {
        let mut vars: Vec<CompiledVar> = Vec::with_capacity(spec.variables.len());
        let mut index: IndexMap<&str, usize> = IndexMap::new();
        for v in &spec.variables {
            let invalid = |reason: String| ScmError::InvalidVariable {
                variable: v.name.clone(),
                reason,
            };
            if index.contains_key(v.name.as_str()) {
                return Err(ScmError::Duplicate(v.name.clone()));
            }
            let parents: Vec<usize> = v
                .parents
                .iter()
                .map(|p| {
                    index.get(p.as_str()).copied().ok_or_else(|| ScmError::UnknownParent {
                        variable: v.name.clone(),
                        parent: p.clone(),
                    })
                })
                .collect::<Result<_, _>>()?;
            let labels: Vec<String> = match (&v.labels, v.levels) {
                (Some(l), Some(k)) if l.len() != k => {
                    return Err(invalid(format!("{} labels for {k} levels", l.len())));
                }
                (Some(l), _) => l.clone(),
                (None, k) => (0..k.unwrap_or(2)).map(|i| i.to_string()).collect(),
            };
            if labels.is_empty() && !matches!(v.mechanism, Mechanism::Linear { .. }) {
                return Err(invalid("a discrete variable needs at least one level".into()));
            }
            let terms = |coefficients: &IndexMap<String, f64>| -> Result<Vec<Term>, ScmError> {
                coefficients
                    .iter()
                    .map(|(key, &coef)| {
                        let (pname, level) = match key.split_once('[') {
                            Some((p, rest)) => (p, Some(rest.trim_end_matches(']'))),
                            None => (key.as_str(), None),
                        };
                        let bad = || invalid(format!("coefficient `{key}` does not name a parent (or parent[level])"));
                        let parent = *index.get(pname).filter(|i| parents.contains(i)).ok_or_else(bad)?;
                        let level = match level {
                            None => {
                                let pv: &CompiledVar = &vars[parent];
                                if pv.is_discrete() && pv.n_levels() > 2 {
                                    return Err(invalid(format!(
                                        "categorical parent `{pname}` needs per-level coefficients `{pname}[label]`"
                                    )));
                                }
                                None
                            }
                            Some(l) => Some(vars[parent].labels.iter().position(|x| x == l).ok_or_else(bad)?),
                        };
                        if !coef.is_finite() {
                            return Err(invalid(format!("coefficient `{key}` is not finite")));
                        }
                        Ok(Term { parent, level, coef })
                    })
                    .collect()
            };
            let kind = match &v.mechanism {
                Mechanism::Cpt { rows } => {
                    if parents.iter().any(|&p| !vars[p].is_discrete()) {
                        return Err(invalid("a CPT needs discrete parents".into()));
                    }
                    let configs: usize = parents.iter().map(|&p| vars[p].n_levels()).product();
                    if rows.len() != configs {
                        return Err(invalid(format!("{} CPT rows, expected {configs}", rows.len())));
                    }
                    for (r, row) in rows.iter().enumerate() {
                        let bad = |reason: String| ScmError::InvalidCpt {
                            variable: v.name.clone(),
                            row: r + 1,
                            reason,
                        };
                        if row.len() != labels.len() {
                            return Err(bad(format!("{} entries, expected {}", row.len(), labels.len())));
                        }
                        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                            return Err(bad("probabilities must be finite and non-negative".into()));
                        }
                        let s: f64 = row.iter().sum();
                        if (s - 1.0).abs() > 1e-12 {
                            return Err(bad(format!("row sums to {s}")));
                        }
                    }
                    Kind::Discrete { table: rows.clone() }
                }
                Mechanism::Logistic { intercept, coefficients } => {
                    if labels.len() != 2 {
                        return Err(invalid("a logistic mechanism needs exactly two levels".into()));
                    }
                    if parents.iter().any(|&p| !vars[p].is_discrete()) {
                        return Err(invalid("logistic mechanisms need discrete parents for enumeration".into()));
                    }
                    let terms = terms(coefficients)?;
                    let configs: usize = parents.iter().map(|&p| vars[p].n_levels()).product();
                    let radix: Vec<usize> = parents.iter().map(|&p| vars[p].n_levels()).collect();
                    let mut values = vec![0.0; vars.len()];
                    let table = (0..configs)
                        .map(|c| {
                            for (&p, l) in parents.iter().zip(decode(c, &radix)) {
                                values[p] = l as f64;
                            }
                            let p1 = sigmoid(linear_predictor(*intercept, &terms, &values));
                            vec![1.0 - p1, p1]
                        })
                        .collect();
                    Kind::Discrete { table }
                }
                Mechanism::Linear { intercept, coefficients, sd } => {
                    if !(sd.is_finite() && *sd >= 0.0) {
                        return Err(invalid(format!("sd must be finite and non-negative, got {sd}")));
                    }
                    Kind::Linear {
                        intercept: *intercept,
                        terms: terms(coefficients)?,
                        sd: *sd,
                    }
                }
            };
            let labels = if matches!(kind, Kind::Linear { .. }) { Vec::new() } else { labels };
            index.insert(&v.name, vars.len());
            vars.push(CompiledVar {
                name: v.name.clone(),
                labels,
                parents,
                latent: v.latent,
                kind,
            });
        }
        let roles = match &spec.roles {
            None => None,
            Some(r) => {
                let find = |role: &str, name: &str| {
                    index
                        .get(name)
                        .copied()
                        .filter(|&i| vars[i].is_discrete())
                        .ok_or_else(|| ScmError::InvalidRole {
                            role: role.to_string(),
                            variable: name.to_string(),
                        })
                };
                let resolved = ResolvedRoles {
                    exposure: find("exposure", &r.exposure)?,
                    mediator: find("mediator", &r.mediator)?,
                    outcome: find("outcome", &r.outcome)?,
                    baseline: r.baseline.iter().map(|b| find("baseline", b)).collect::<Result<_, _>>()?,
                };
                for (role, i) in [("exposure", resolved.exposure), ("outcome", resolved.outcome)] {
                    if vars[i].n_levels() != 2 {
                        return Err(ScmError::InvalidRole {
                            role: role.into(),
                            variable: vars[i].name.clone(),
                        });
                    }
                }
                Some(resolved)
            }
        };
        Ok(CompiledScm { vars, roles })
    }

    pub fn n_variables(&self) -> usize {
        self.vars.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.vars.iter().map(|v| v.name.as_str()).collect()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    /// Number of levels of each variable (0 for continuous ones).
    pub fn levels(&self) -> Vec<usize> {
        self.vars.iter().map(CompiledVar::n_levels).collect()
    }

    pub fn labels(&self, var: usize) -> &[String] {
        &self.vars[var].labels
    }

    /// Pr(var = level | parents as in `values`), for a discrete variable.
    pub(crate) fn cond_prob(&self, var: usize, level: usize, values: &[usize]) -> f64 {
        match &self.vars[var].kind {
            Kind::Discrete { table } => table[self.parent_config(var, values)][level],
            Kind::Linear { .. } => unreachable!("continuous variables are not enumerated"),
        }
    }

    pub(crate) fn parent_config(&self, var: usize, values: &[usize]) -> usize {
        self.vars[var]
            .parents
            .iter()
            .fold(0, |acc, &p| acc * self.vars[p].n_levels() + values[p])
    }

    pub(crate) fn require_discrete(&self) -> Result<(), ScmError> {
        match self.vars.iter().find(|v| !v.is_discrete()) {
            Some(v) => Err(ScmError::Continuous(v.name.clone())),
            None => Ok(()),
        }
    }

    pub(crate) fn roles(&self) -> Result<&ResolvedRoles, ScmError> {
        self.roles.as_ref().ok_or(ScmError::MissingRoles)
    }

    /// Indices of `var` and all its descendants.
    pub(crate) fn descendants(&self, var: usize) -> Vec<bool> {
        let mut d = vec![false; self.vars.len()];
        d[var] = true;
        for (i, v) in self.vars.iter().enumerate().skip(var + 1) {
            if v.parents.iter().any(|&p| d[p]) {
                d[i] = true;
            }
        }
        d
    }
}

/// Mixed-radix digits of `index`, most significant first.
pub(crate) fn decode(mut index: usize, radix: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radix.len()];
    for (slot, &r) in out.iter_mut().zip(radix).rev() {
        *slot = index % r;
        index /= r;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
        [[variables]]
        name = "Q"
        mechanism = { type = "cpt", rows = [[0.6, 0.4]] }

        [[variables]]
        name = "G"
        labels = ["a", "b", "c"]
        parents = ["Q"]
        mechanism = { type = "cpt", rows = [[0.2, 0.3, 0.5], [0.5, 0.25, 0.25]] }

        [[variables]]
        name = "Y"
        parents = ["Q", "G"]
        mechanism = { type = "logistic", intercept = -1.0, coefficients = { Q = 0.8, "G[c]" = 0.5 } }
    "#;

    #[test]
    fn compiles_and_expands_logistic() {
        let scm = ScmSpec::from_toml(SMALL).unwrap().compile().unwrap();
        assert_eq!(scm.levels(), vec![2, 3, 2]);
        // Q = 1, G = c is the last parent configuration
        let p = scm.cond_prob(2, 1, &[1, 2, 0]);
        assert!((p - sigmoid(-1.0 + 0.8 + 0.5)).abs() < 1e-15);
        let p = scm.cond_prob(2, 1, &[0, 1, 0]);
        assert!((p - sigmoid(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip() {
        let spec = ScmSpec::from_toml(SMALL).unwrap();
        assert_eq!(ScmSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad_sum = SMALL.replace("[[0.6, 0.4]]", "[[0.6, 0.5]]");
        assert!(matches!(
            ScmSpec::from_toml(&bad_sum).unwrap().compile(),
            Err(ScmError::InvalidCpt { row: 1, .. })
        ));
        let bad_order = SMALL.replace("parents = [\"Q\"]", "parents = [\"Y\"]");
        assert!(matches!(
            ScmSpec::from_toml(&bad_order).unwrap().compile(),
            Err(ScmError::UnknownParent { .. })
        ));
        let bad_key = SMALL.replace("\"G[c]\"", "\"G[d]\"");
        assert!(matches!(
            ScmSpec::from_toml(&bad_key).unwrap().compile(),
            Err(ScmError::InvalidVariable { .. })
        ));
        assert!(matches!(ScmSpec::from_toml("variables = 3"), Err(ScmError::Parse(_))));
    }

    #[test]
    fn decode_is_mixed_radix() {
        assert_eq!(decode(5, &[2, 3]), vec![1, 2]);
        assert_eq!(decode(0, &[]), Vec::<usize>::new());
    }
}
