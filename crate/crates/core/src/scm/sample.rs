use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{linear_predictor, CompiledScm, Kind, ScmError};
use crate::data::{Cell, Column, ColumnKind, Dataset, Value};

/// Sampled values (level index for discrete variables) together with the
/// exogenous uniform that produced each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledUnits {
    pub values: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

/// Evaluates every variable in order from its noise, except those in
/// `forced`, which are set to the given value.
pub fn replay(scm: &CompiledScm, noise: &[f64], forced: &[(usize, f64)]) -> Vec<f64> {
    let mut values = vec![0.0; scm.n_variables()];
    for (v, var) in scm.vars.iter().enumerate() {
        if let Some(&(_, x)) = forced.iter().find(|(f, _)| *f == v) {
            values[v] = x;
            continue;
        }
        let u = noise[v];
        values[v] = match &var.kind {
            Kind::Discrete { table } => {
                let config = var
                    .parents
                    .iter()
                    .fold(0, |acc, &p| acc * scm.vars[p].n_levels() + values[p] as usize);
                inverse_cdf(&table[config], u) as f64
            }
            Kind::Linear { intercept, terms, sd } => {
                let z = Normal::standard().inverse_cdf(u);
                linear_predictor(*intercept, terms, &values) + sd * z
            }
        };
    }
    values
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `n` independent units from seed `seed`, one uniform per variable per unit.
pub fn sample_units(scm: &CompiledScm, n: usize, seed: u64) -> Result<SampledUnits, ScmError> {
    if n == 0 {
        return Err(ScmError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = scm.n_variables();
    let noise: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| rng.sample::<f64, _>(Open01)).collect())
        .collect();
    let values = noise.iter().map(|u| replay(scm, u, &[])).collect();
    Ok(SampledUnits { values, noise })
}

/// Observed variables of `n` sampled units as a dataset. Two-level variables
/// become binary columns, larger ones categorical, both with the first label
/// as reference.
pub fn sample(scm: &CompiledScm, n: usize, seed: u64) -> Result<Dataset, ScmError> {
    let units = sample_units(scm, n, seed)?;
    let mut columns = Vec::new();
    for (v, var) in scm.vars.iter().enumerate() {
        if var.latent {
            continue;
        }
        let column = match var.kind {
            Kind::Linear { .. } => {
                let x: Vec<f64> = units.values.iter().map(|row| row[v]).collect();
                Column::continuous(var.name.clone(), &x)?
            }
            Kind::Discrete { .. } => {
                let kind = if var.n_levels() == 2 {
                    ColumnKind::binary(&var.labels[0], &var.labels[1])
                } else {
                    ColumnKind::categorical(var.labels.iter().cloned(), &var.labels[0])
                };
                let cells = units
                    .values
                    .iter()
                    .map(|row| Cell::Observed(Value::Level(row[v] as usize)))
                    .collect();
                Column::new(var.name.clone(), kind, cells)?
            }
        };
        columns.push(column);
    }
    Ok(Dataset::new(columns, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::ScmSpec;

    const SPEC: &str = r#"
        [[variables]]
        name = "U"
        latent = true
        mechanism = { type = "cpt", rows = [[0.5, 0.5]] }
        [[variables]]
        name = "Q"
        labels = ["no", "yes"]
        parents = ["U"]
        mechanism = { type = "logistic", intercept = -0.5, coefficients = { U = 1.0 } }
        [[variables]]
        name = "M"
        parents = ["Q"]
        mechanism = { type = "linear", intercept = 1.0, coefficients = { Q = 2.0 }, sd = 0.5 }
        [[variables]]
        name = "Y"
        parents = ["M", "U"]
        mechanism = { type = "linear", coefficients = { M = 1.0, U = 0.5 }, sd = 1.0 }
    "#;

    fn scm() -> CompiledScm {
        ScmSpec::from_toml(SPEC).unwrap().compile().unwrap()
    }

    #[test]
    fn latent_columns_are_dropped() {
        let ds = sample(&scm(), 50, 3).unwrap();
        assert_eq!(ds.column_names(), vec!["Q", "M", "Y"]);
        assert!(ds.column("Q").unwrap().kind.is_binary());
    }

    #[test]
    fn same_seed_same_sample() {
        assert_eq!(sample(&scm(), 40, 9).unwrap().fingerprint(), sample(&scm(), 40, 9).unwrap().fingerprint());
        assert_ne!(sample(&scm(), 40, 9).unwrap().fingerprint(), sample(&scm(), 40, 10).unwrap().fingerprint());
    }

    #[test]
    fn zero_rows_is_an_error() {
        assert!(matches!(sample(&scm(), 0, 1), Err(ScmError::EmptySample)));
    }

    #[test]
    fn forcing_factual_mediator_reproduces_outcome() {
        let s = scm();
        let units = sample_units(&s, 200, 4).unwrap();
        for (vals, u) in units.values.iter().zip(&units.noise) {
            let again = replay(&s, u, &[(2, vals[2])]);
            assert_eq!(again[3], vals[3]);
        }
    }

    #[test]
    fn inverse_cdf_skips_empty_levels() {
        assert_eq!(inverse_cdf(&[0.0, 1.0], 0.0), 1);
        assert_eq!(inverse_cdf(&[0.3, 0.7], 0.29), 0);
        assert_eq!(inverse_cdf(&[0.3, 0.7, 0.0], 1.0), 1);
    }
}
