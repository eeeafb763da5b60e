use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mechanism, ScmRoles, ScmSpec, VariableSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomScmOptions {
    /// Largest absolute logistic coefficient.
    pub coef_bound: f64,
    /// Largest absolute intercept.
    pub intercept_bound: f64,
    /// Adds the edge X -> M.
    pub baseline_to_mediator: bool,
    /// Adds a latent U -> M, U -> Y with strong coefficients.
    pub mediator_confounder: bool,
}

impl Default for RandomScmOptions {
    fn default() -> Self {
        RandomScmOptions {
            coef_bound: 1.5,
            intercept_bound: 1.0,
            baseline_to_mediator: true,
            mediator_confounder: false,
        }
    }
}

/// Binary mediation SCM with latent H -> Q, H -> X, then Q -> M, Q -> Y,
/// M -> Y and X -> Y, all logistic with uniformly drawn coefficients.
pub fn random_mediation_scm(opts: &RandomScmOptions, seed: u64) -> ScmSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut var = |name: &str, parents: &[&str], latent: bool, strong: &[&str]| {
        let intercept = rng.gen_range(-opts.intercept_bound..=opts.intercept_bound);
        let coefficients: IndexMap<String, f64> = parents
            .iter()
            .map(|&p| {
                let c = if strong.contains(&p) {
                    let mag = rng.gen_range(2.0..=4.0);
                    if rng.gen_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                } else {
                    rng.gen_range(-opts.coef_bound..=opts.coef_bound)
                };
                (p.to_string(), c)
            })
            .collect();
        VariableSpec {
            name: name.into(),
            labels: None,
            levels: None,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            latent,
            mechanism: Mechanism::Logistic { intercept, coefficients },
        }
    };
    let mut variables = vec![var("H", &[], true, &[]), var("Q", &["H"], false, &[]), var("X", &["H"], false, &[])];
    let mut m_parents = vec!["Q"];
    let mut y_parents = vec!["Q", "M", "X"];
    if opts.baseline_to_mediator {
        m_parents.push("X");
    }
    if opts.mediator_confounder {
        variables.push(var("U", &[], true, &[]));
        m_parents.push("U");
        y_parents.push("U");
    }
    variables.push(var("M", &m_parents, false, &["U"]));
    variables.push(var("Y", &y_parents, false, &["U"]));
    ScmSpec {
        variables,
        roles: Some(ScmRoles {
            exposure: "Q".into(),
            mediator: "M".into(),
            outcome: "Y".into(),
            baseline: vec!["X".into()],
        }),
    }
}
