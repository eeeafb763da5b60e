use serde::{Deserialize, Serialize};

use super::{CausalDag, DagError};

/// Whether `a` and `b` are d-separated given `conditioned`, by a reachability
/// search over (node, direction) pairs.
pub fn d_separated(dag: &CausalDag, a: &str, b: &str, conditioned: &[&str]) -> Result<bool, DagError> {
    dag.validate()?;
    let (ia, ib) = (dag.index(a)?, dag.index(b)?);
    if ia == ib {
        return Err(DagError::InvalidQuery(format!("`{a}` cannot be tested against itself")));
    }
    let z = dag.indices(conditioned)?;
    if z.contains(&ia) || z.contains(&ib) {
        return Ok(true);
    }
    Ok(!reachable(dag, ia, &z)[ib])
}

/// Nodes connected to `start` by an active trail given `z`.
fn reachable(dag: &CausalDag, start: usize, z: &[usize]) -> Vec<bool> {
    let n = dag.len();
    let mut in_z = vec![false; n];
    for &v in z {
        in_z[v] = true;
    }
    let opens = dag.ancestors_of(z);
    // direction: false = arrived from a child (moving up), true = from a parent
    let mut visited = vec![[false; 2]; n];
    let mut out = vec![false; n];
    let mut stack = vec![(start, false)];
    while let Some((v, down)) = stack.pop() {
        if std::mem::replace(&mut visited[v][down as usize], true) {
            continue;
        }
        if !in_z[v] {
            out[v] = true;
        }
        if !down {
            if !in_z[v] {
                stack.extend(dag.parents(v).iter().map(|&p| (p, false)));
                stack.extend(dag.children(v).iter().map(|&c| (c, true)));
            }
        } else {
            if !in_z[v] {
                stack.extend(dag.children(v).iter().map(|&c| (c, true)));
            }
            if opens[v] {
                stack.extend(dag.parents(v).iter().map(|&p| (p, false)));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub path: Vec<String>,
    /// Conditioned non-colliders on the path.
    pub blocked_by: Vec<String>,
    /// Colliders on the path with no conditioned descendant.
    pub closed_colliders: Vec<String>,
    pub is_backdoor: bool,
    pub open: bool,
}

fn all_simple_paths(dag: &CausalDag, from: usize, to: usize, first_into_from: bool) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut path = vec![from];
    let mut on_path = vec![false; dag.len()];
    on_path[from] = true;
    fn extend(
        dag: &CausalDag,
        to: usize,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<usize>>,
        first_into_from: bool,
    ) {
        let v = *path.last().unwrap();
        if v == to {
            out.push(path.clone());
            return;
        }
        let next: Vec<usize> = if path.len() == 1 && first_into_from {
            dag.parents(v).to_vec()
        } else {
            dag.parents(v).iter().chain(dag.children(v)).copied().collect()
        };
        for w in next {
            if !on_path[w] {
                on_path[w] = true;
                path.push(w);
                extend(dag, to, path, on_path, out, first_into_from);
                path.pop();
                on_path[w] = false;
            }
        }
    }
    extend(dag, to, &mut path, &mut on_path, &mut out, first_into_from);
    out
}

fn annotate(dag: &CausalDag, path: &[usize], z: &[usize], is_backdoor: bool) -> PathReport {
    let opens = dag.ancestors_of(z);
    let mut blocked_by = Vec::new();
    let mut closed_colliders = Vec::new();
    for k in 1..path.len().saturating_sub(1) {
        let v = path[k];
        let collider = dag.has_edge(path[k - 1], v) && dag.has_edge(path[k + 1], v);
        if collider {
            if !opens[v] {
                closed_colliders.push(dag.name(v).to_string());
            }
        } else if z.contains(&v) {
            blocked_by.push(dag.name(v).to_string());
        }
    }
    PathReport {
        path: path.iter().map(|&v| dag.name(v).to_string()).collect(),
        open: blocked_by.is_empty() && closed_colliders.is_empty(),
        blocked_by,
        closed_colliders,
        is_backdoor,
    }
}

fn check_query(dag: &CausalDag, exposure: &str, outcome: &str, set: &[&str]) -> Result<(usize, usize, Vec<usize>), DagError> {
    dag.validate()?;
    let (x, y) = (dag.index(exposure)?, dag.index(outcome)?);
    if x == y {
        return Err(DagError::InvalidQuery("exposure and outcome must differ".into()));
    }
    let z = dag.indices(set)?;
    if z.contains(&x) || z.contains(&y) {
        return Err(DagError::InvalidQuery("the conditioning set cannot contain the exposure or the outcome".into()));
    }
    Ok((x, y, z))
}

/// Every simple path from `exposure` to `outcome` that starts with an edge
/// into `exposure`, marked open or blocked given `conditioned`.
pub fn backdoor_paths(dag: &CausalDag, exposure: &str, outcome: &str, conditioned: &[&str]) -> Result<Vec<PathReport>, DagError> {
    let (x, y, z) = check_query(dag, exposure, outcome, conditioned)?;
    Ok(all_simple_paths(dag, x, y, true)
        .iter()
        .map(|p| annotate(dag, p, &z, true))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Total,
    /// A mediator is conditioned on, so the exposure coefficient targets a
    /// direct effect.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentReport {
    pub valid: bool,
    pub estimand: Estimand,
    pub open_backdoor_paths: Vec<PathReport>,
    /// Conditioned nodes on a directed exposure-to-outcome path.
    pub mediators_conditioned: Vec<String>,
    /// Other conditioned descendants of the exposure; these invalidate the set.
    pub descendants_conditioned: Vec<String>,
    pub explanation: String,
}

/// Backdoor criterion for `set`. Conditioning on a mediator is not counted as
/// invalid; it is reported through `estimand = Direct`.
pub fn is_valid_adjustment(dag: &CausalDag, exposure: &str, outcome: &str, set: &[&str]) -> Result<AdjustmentReport, DagError> {
    let (x, y, z) = check_query(dag, exposure, outcome, set)?;
    if let Some(&l) = z.iter().find(|&&v| dag.is_latent(v)) {
        return Err(DagError::InvalidQuery(format!("`{}` is latent and cannot be adjusted for", dag.name(l))));
    }
    let desc = dag.descendants(x);
    let anc_y = dag.ancestors_of(&[y]);
    let mut mediators = Vec::new();
    let mut descendants = Vec::new();
    for &v in &z {
        if desc[v] {
            if anc_y[v] {
                mediators.push(dag.name(v).to_string());
            } else {
                descendants.push(dag.name(v).to_string());
            }
        }
    }
    let open: Vec<PathReport> = all_simple_paths(dag, x, y, true)
        .iter()
        .map(|p| annotate(dag, p, &z, true))
        .filter(|r| r.open)
        .collect();
    let valid = open.is_empty() && descendants.is_empty();
    let mut notes = Vec::new();
    if open.is_empty() {
        notes.push("all backdoor paths blocked".to_string());
    } else {
        for p in &open {
            notes.push(format!("open backdoor path {}", p.path.join(" - ")));
        }
    }
    if !descendants.is_empty() {
        notes.push(format!("conditions on descendants of the exposure: {}", descendants.join(", ")));
    }
    if !mediators.is_empty() {
        notes.push(format!("mediator conditioned: direct-effect estimand ({})", mediators.join(", ")));
    }
    Ok(AdjustmentReport {
        valid,
        estimand: if mediators.is_empty() { Estimand::Total } else { Estimand::Direct },
        open_backdoor_paths: open,
        mediators_conditioned: mediators,
        descendants_conditioned: descendants,
        explanation: notes.join("; "),
    })
}

/// Valid total-effect adjustment sets of observed non-descendants of the
/// exposure with no valid proper subset, by exhaustive search.
pub fn minimal_adjustment_sets(dag: &CausalDag, exposure: &str, outcome: &str) -> Result<Vec<Vec<String>>, DagError> {
    let (x, y, _) = check_query(dag, exposure, outcome, &[])?;
    let desc = dag.descendants(x);
    let candidates: Vec<usize> = (0..dag.len()).filter(|&v| v != y && !desc[v] && !dag.is_latent(v)).collect();
    if candidates.len() > 20 {
        return Err(DagError::InvalidQuery(format!(
            "{} candidate nodes is too many for exhaustive search",
            candidates.len()
        )));
    }
    let paths = all_simple_paths(dag, x, y, true);
    let mut valid_masks: Vec<u32> = Vec::new();
    let mut masks: Vec<u32> = (0..1u32 << candidates.len()).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        if valid_masks.iter().any(|v| v & mask == *v) {
            continue;
        }
        let z: Vec<usize> = (0..candidates.len()).filter(|k| mask >> k & 1 == 1).map(|k| candidates[k]).collect();
        if paths.iter().all(|p| !annotate(dag, p, &z, true).open) {
            valid_masks.push(mask);
        }
    }
    Ok(valid_masks
        .into_iter()
        .map(|m| {
            (0..candidates.len())
                .filter(|k| m >> k & 1 == 1)
                .map(|k| dag.name(candidates[k]).to_string())
                .collect()
        })
        .collect())
}
