use serde::{Deserialize, Serialize};

use super::{decode, CompiledScm, ScmError, MAX_CELLS};

/// Probability of every joint configuration, indexed in mixed radix over the
/// variables in spec order (first variable most significant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub names: Vec<String>,
    pub levels: Vec<usize>,
    pub probs: Vec<f64>,
}

impl JointTable {
    pub fn assignment(&self, cell: usize) -> Vec<usize> {
        decode(cell, &self.levels)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of the event selected by `pred`.
    pub fn prob_where(&self, pred: impl Fn(&[usize]) -> bool) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(c, _)| pred(&self.assignment(*c)))
            .map(|(_, p)| p)
            .sum()
    }
}

fn state_space(levels: &[usize]) -> Result<usize, ScmError> {
    let mut size: usize = 1;
    for &l in levels {
        size = size.checked_mul(l).filter(|&s| s <= MAX_CELLS).ok_or(ScmError::TooLarge(
            levels.iter().fold(1usize, |a, &b| a.saturating_mul(b)),
        ))?;
    }
    Ok(size)
}

pub fn enumerate_joint(scm: &CompiledScm) -> Result<JointTable, ScmError> {
    scm.require_discrete()?;
    let levels = scm.levels();
    let size = state_space(&levels)?;
    let probs = (0..size)
        .map(|cell| {
            let a = decode(cell, &levels);
            (0..levels.len()).map(|v| scm.cond_prob(v, a[v], &a)).product()
        })
        .collect();
    Ok(JointTable {
        names: scm.names().into_iter().map(str::to_string).collect(),
        levels,
        probs,
    })
}

/// Identification quantities within one baseline stratum `x`, on the
/// risk-difference scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimands {
    /// Baseline labels, in role order.
    pub x: Vec<String>,
    pub p_x: f64,
    /// E[Y | Q=0, x].
    pub e_y_q0: f64,
    /// E[Y | Q=1, x].
    pub e_y_q1: f64,
    /// Sum over m of E[Y | Q=1, m, x] Pr(m | Q=0, x).
    pub e_y_h0: f64,
    /// Sum over m of E[Y | Q=1, m, x] Pr(m | Q=1, x).
    pub e_y_h1: f64,
    pub direct_rd: f64,
    pub indirect_rd: f64,
    pub total_rd: f64,
    /// logit E[Y | Q=1, x] - logit E[Y | Q=0, x].
    pub total_log_or: f64,
}

/// Baseline-standardized contrast: sum over x of E[Y | Q=1, x] Pr(x | Q=0),
/// minus E[Y | Q=0].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedContrast {
    pub e_y_g0: f64,
    pub e_y_q0: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimands {
    pub strata: Vec<StratumEstimands>,
    pub standardized: StandardizedContrast,
}

/// Joint masses of (x, q, m) and of (x, q, m, Y = 1).
struct Margins {
    n_x: usize,
    n_m: usize,
    mass: Vec<f64>,
    event: Vec<f64>,
}

impl Margins {
    fn idx(&self, x: usize, q: usize, m: usize) -> usize {
        (x * 2 + q) * self.n_m + m
    }

    fn p(&self, x: usize, q: usize, m: usize) -> f64 {
        self.mass[self.idx(x, q, m)]
    }

    fn y(&self, x: usize, q: usize, m: usize) -> f64 {
        self.event[self.idx(x, q, m)]
    }

    fn p_xq(&self, x: usize, q: usize) -> f64 {
        (0..self.n_m).map(|m| self.p(x, q, m)).sum()
    }

    fn y_xq(&self, x: usize, q: usize) -> f64 {
        (0..self.n_m).map(|m| self.y(x, q, m)).sum()
    }
}

fn baseline_radix(scm: &CompiledScm) -> Result<Vec<usize>, ScmError> {
    Ok(scm.roles()?.baseline.iter().map(|&b| scm.vars[b].n_levels()).collect())
}

fn margins(scm: &CompiledScm, joint: &JointTable) -> Result<Margins, ScmError> {
    let r = scm.roles()?;
    let radix = baseline_radix(scm)?;
    let n_x: usize = radix.iter().product();
    let n_m = scm.vars[r.mediator].n_levels();
    let mut out = Margins {
        n_x,
        n_m,
        mass: vec![0.0; n_x * 2 * n_m],
        event: vec![0.0; n_x * 2 * n_m],
    };
    for (cell, &p) in joint.probs.iter().enumerate() {
        let a = joint.assignment(cell);
        let x = r.baseline.iter().fold(0, |acc, &b| acc * scm.vars[b].n_levels() + a[b]);
        let i = out.idx(x, a[r.exposure], a[r.mediator]);
        out.mass[i] += p;
        if a[r.outcome] == 1 {
            out.event[i] += p;
        }
    }
    Ok(out)
}

fn stratum_labels(scm: &CompiledScm, x: usize) -> Result<Vec<String>, ScmError> {
    let r = scm.roles()?;
    let digits = decode(x, &baseline_radix(scm)?);
    Ok(r.baseline
        .iter()
        .zip(digits)
        .map(|(&b, d)| scm.vars[b].labels[d].clone())
        .collect())
}

fn cell_name(scm: &CompiledScm, q: usize, m: Option<usize>, x: usize) -> Result<String, ScmError> {
    let r = scm.roles()?;
    let mut parts = vec![format!("{}={}", scm.vars[r.exposure].name, scm.vars[r.exposure].labels[q])];
    if let Some(m) = m {
        parts.push(format!("{}={}", scm.vars[r.mediator].name, scm.vars[r.mediator].labels[m]));
    }
    for (&b, l) in r.baseline.iter().zip(stratum_labels(scm, x)?) {
        parts.push(format!("{}={l}", scm.vars[b].name));
    }
    Ok(parts.join(", "))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn oracle_estimands(scm: &CompiledScm) -> Result<OracleEstimands, ScmError> {
    let joint = enumerate_joint(scm)?;
    let mg = margins(scm, &joint)?;
    let mut strata = Vec::with_capacity(mg.n_x);
    for x in 0..mg.n_x {
        let p_q = [mg.p_xq(x, 0), mg.p_xq(x, 1)];
        for q in 0..2 {
            if p_q[q] == 0.0 {
                return Err(ScmError::Positivity(cell_name(scm, q, None, x)?));
            }
        }
        let e_y = [mg.y_xq(x, 0) / p_q[0], mg.y_xq(x, 1) / p_q[1]];
        let mut e_y_h0 = 0.0;
        let mut e_y_h1 = 0.0;
        let mut e_y_q0_std = 0.0;
        for m in 0..mg.n_m {
            let w0 = mg.p(x, 0, m) / p_q[0];
            let w1 = mg.p(x, 1, m) / p_q[1];
            if w0 == 0.0 && w1 == 0.0 {
                continue;
            }
            if mg.p(x, 1, m) == 0.0 {
                return Err(ScmError::Positivity(cell_name(scm, 1, Some(m), x)?));
            }
            let e1 = mg.y(x, 1, m) / mg.p(x, 1, m);
            e_y_h0 += e1 * w0;
            e_y_h1 += e1 * w1;
            if w0 > 0.0 {
                e_y_q0_std += mg.y(x, 0, m) / mg.p(x, 0, m) * w0;
            }
        }
        strata.push(StratumEstimands {
            x: stratum_labels(scm, x)?,
            p_x: p_q[0] + p_q[1],
            e_y_q0: e_y[0],
            e_y_q1: e_y[1],
            e_y_h0,
            e_y_h1,
            direct_rd: e_y_h0 - e_y_q0_std,
            indirect_rd: e_y_h1 - e_y_h0,
            total_rd: e_y[1] - e_y[0],
            total_log_or: logit(e_y[1]) - logit(e_y[0]),
        });
    }
    let p_q0: f64 = (0..mg.n_x).map(|x| mg.p_xq(x, 0)).sum();
    let e_y_q0 = (0..mg.n_x).map(|x| mg.y_xq(x, 0)).sum::<f64>() / p_q0;
    let e_y_g0 = strata
        .iter()
        .enumerate()
        .map(|(x, s)| s.e_y_q1 * mg.p_xq(x, 0) / p_q0)
        .sum::<f64>();
    Ok(OracleEstimands {
        strata,
        standardized: StandardizedContrast {
            e_y_g0,
            e_y_q0,
            contrast: e_y_g0 - e_y_q0,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualCell {
    pub m: String,
    pub x: Vec<String>,
    /// E[Y_m | Q=1, x] from the model with M forced to m.
    pub counterfactual: f64,
    /// E[Y | Q=1, M=m, x].
    pub observational: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub cells: Vec<CounterfactualCell>,
    pub max_abs_discrepancy: f64,
}

/// Compares E[Y_m | Q=1, x], computed by evaluating the descendants of M with
/// M forced to m, against the observational E[Y | Q=1, m, x]. Exposure and
/// baseline are non-descendants of M, so conditioning on them is the same in
/// the factual and intervened worlds.
pub fn counterfactual_check(scm: &CompiledScm) -> Result<CounterfactualReport, ScmError> {
    let joint = enumerate_joint(scm)?;
    let mg = margins(scm, &joint)?;
    let r = scm.roles()?;
    let desc = scm.descendants(r.mediator);
    for (role, &v) in [("exposure", &r.exposure)].into_iter().chain(r.baseline.iter().map(|b| ("baseline", b))) {
        if desc[v] {
            return Err(ScmError::InvalidRole {
                role: role.into(),
                variable: scm.vars[v].name.clone(),
            });
        }
    }
    let n = scm.n_variables();
    let levels = scm.levels();
    let non_desc: Vec<usize> = (0..n).filter(|&v| !desc[v]).collect();
    let below: Vec<usize> = (0..n).filter(|&v| desc[v] && v != r.mediator).collect();
    let nd_radix: Vec<usize> = non_desc.iter().map(|&v| levels[v]).collect();
    let below_radix: Vec<usize> = below.iter().map(|&v| levels[v]).collect();
    let nd_size = state_space(&nd_radix)?;
    let below_size = state_space(&below_radix)?;

    // cf[x][m] accumulates Pr(n) * Pr(Y_m = 1 | n) over n with Q = 1
    let mut cf = vec![vec![0.0; mg.n_m]; mg.n_x];
    let mut a = vec![0usize; n];
    for cell in 0..nd_size {
        for (&v, d) in non_desc.iter().zip(decode(cell, &nd_radix)) {
            a[v] = d;
        }
        if a[r.exposure] != 1 {
            continue;
        }
        let p_n: f64 = non_desc.iter().map(|&v| scm.cond_prob(v, a[v], &a)).product();
        if p_n == 0.0 {
            continue;
        }
        let x = r.baseline.iter().fold(0, |acc, &b| acc * levels[b] + a[b]);
        for m in 0..mg.n_m {
            a[r.mediator] = m;
            let p_event = if desc[r.outcome] {
                (0..below_size)
                    .map(|bc| {
                        for (&v, d) in below.iter().zip(decode(bc, &below_radix)) {
                            a[v] = d;
                        }
                        if a[r.outcome] != 1 {
                            return 0.0;
                        }
                        below.iter().map(|&v| scm.cond_prob(v, a[v], &a)).product::<f64>()
                    })
                    .sum()
            } else {
                (a[r.outcome] == 1) as u8 as f64
            };
            cf[x][m] += p_n * p_event;
        }
    }

    let mut cells = Vec::new();
    for (x, row) in cf.iter().enumerate() {
        let p_x1 = mg.p_xq(x, 1);
        if p_x1 == 0.0 {
            continue;
        }
        for (m, &v) in row.iter().enumerate() {
            if mg.p(x, 1, m) == 0.0 {
                continue;
            }
            let counterfactual = v / p_x1;
            let observational = mg.y(x, 1, m) / mg.p(x, 1, m);
            cells.push(CounterfactualCell {
                m: scm.vars[r.mediator].labels[m].clone(),
                x: stratum_labels(scm, x)?,
                counterfactual,
                observational,
                abs_diff: (counterfactual - observational).abs(),
            });
        }
    }
    let max_abs_discrepancy = cells.iter().map(|c| c.abs_diff).fold(0.0, f64::max);
    Ok(CounterfactualReport {
        cells,
        max_abs_discrepancy,
    })
}
