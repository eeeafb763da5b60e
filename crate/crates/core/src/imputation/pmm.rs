//! One chain of predictive mean matching.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{replace_cells, ImputationConfig, ImputeError};
use crate::data::{Cell, Column, ColumnKind, Dataset};
use crate::glm::{collinear_columns, encode_column, fit_logistic, sigmoid, DesignMatrix, FitOptions, GlmError};

const LOGIT_OPTIONS: FitOptions = FitOptions {
    max_iter: 25,
    tol: 1e-8,
    separation_bound: 30.0,
    require_convergence: false,
};

/// Design of every other usable column (complete, or a target currently
/// filled in), excluding the weight column.
fn predictors(cols: &[Column], target: usize, usable: &[bool]) -> Result<DesignMatrix, GlmError> {
    let mut blocks = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        if j != target && usable[j] {
            blocks.extend(encode_column(c)?);
        }
    }
    DesignMatrix::from_columns(blocks, cols[target].len())
}

fn subset(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<(), GlmError> {
    let dependent = collinear_columns(x, &vec![1.0; x.nrows()], names);
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(GlmError::RankDeficient { columns: dependent })
    }
}

fn least_squares(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<DVector<f64>, GlmError> {
    check_rank(x, names)?;
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(&DVector::from_column_slice(y));
    xtx.cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| GlmError::RankDeficient { columns: names.to_vec() })
}

fn logistic(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<DVector<f64>, GlmError> {
    let design = DesignMatrix {
        x: x.clone(),
        names: names.to_vec(),
        offsets: Default::default(),
        empty_columns: Vec::new(),
    };
    let fit = fit_logistic(&design, y, &vec![1.0; y.len()], &LOGIT_OPTIONS)?;
    Ok(DVector::from_vec(fit.coefficients))
}

/// Fits on the observed rows and, when parameter draws are on, refits on a
/// bootstrap resample of them for the rows being imputed. A resample that
/// loses rank falls back to the full-data coefficients.
fn coefficient_pair<F>(
    x: &DMatrix<f64>,
    rows: &[usize],
    y: &[f64],
    draw: bool,
    rng: &mut ChaCha8Rng,
    fit: F,
) -> Result<(DVector<f64>, DVector<f64>), GlmError>
where
    F: Fn(&DMatrix<f64>, &[f64]) -> Result<DVector<f64>, GlmError>,
{
    let beta = fit(&subset(x, rows), y)?;
    if !draw {
        return Ok((beta.clone(), beta));
    }
    let picks: Vec<usize> = (0..rows.len()).map(|_| rng.gen_range(0..rows.len())).collect();
    let boot_rows: Vec<usize> = picks.iter().map(|&i| rows[i]).collect();
    let boot_y: Vec<f64> = picks.iter().map(|&i| y[i]).collect();
    let star = fit(&subset(x, &boot_rows), &boot_y).unwrap_or_else(|_| beta.clone());
    Ok((beta, star))
}

/// Per-row prediction vectors used for matching: the fitted mean for
/// continuous and binary columns, level probabilities for categorical ones.
struct Predictions {
    donors: Vec<Vec<f64>>,
    recipients: Vec<Vec<f64>>,
}

fn predict_linear(x: &DMatrix<f64>, rows: &[usize], beta: &DVector<f64>, link: fn(f64) -> f64) -> Vec<Vec<f64>> {
    rows.iter().map(|&r| vec![link(x.row(r).transpose().dot(beta))]).collect()
}

fn predictions(
    col: &Column,
    x: &DMatrix<f64>,
    names: &[String],
    obs: &[usize],
    mis: &[usize],
    draw: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Predictions, GlmError> {
    match &col.kind {
        ColumnKind::Continuous => {
            let y: Vec<f64> = obs.iter().map(|&r| col.numeric(r).unwrap()).collect();
            let (beta, star) = coefficient_pair(x, obs, &y, draw, rng, |x, y| least_squares(x, y, names))?;
            Ok(Predictions {
                donors: predict_linear(x, obs, &beta, |v| v),
                recipients: predict_linear(x, mis, &star, |v| v),
            })
        }
        ColumnKind::Binary { .. } => {
            let y: Vec<f64> = obs.iter().map(|&r| col.numeric(r).unwrap()).collect();
            let (beta, star) = coefficient_pair(x, obs, &y, draw, rng, |x, y| logistic(x, y, names))?;
            Ok(Predictions {
                donors: predict_linear(x, obs, &beta, sigmoid),
                recipients: predict_linear(x, mis, &star, sigmoid),
            })
        }
        ColumnKind::Categorical { levels, .. } => {
            // one logit per non-reference level against the reference
            let reference = col.kind.reference_index().unwrap();
            check_rank(&subset(x, obs), names)?;
            let mut eta_obs = vec![vec![0.0; levels.len()]; obs.len()];
            let mut eta_mis = vec![vec![0.0; levels.len()]; mis.len()];
            for level in (0..levels.len()).filter(|&l| l != reference) {
                let pair: Vec<usize> = obs
                    .iter()
                    .copied()
                    .filter(|&r| matches!(col.level(r), Some(v) if v == level || v == reference))
                    .collect();
                let y: Vec<f64> = pair.iter().map(|&r| (col.level(r) == Some(level)) as u8 as f64).collect();
                if !y.contains(&1.0) {
                    for e in eta_obs.iter_mut().chain(eta_mis.iter_mut()) {
                        e[level] = f64::NEG_INFINITY;
                    }
                    continue;
                }
                // columns constant on this level's rows are aliased with the
                // intercept in its logit and keep a zero coefficient
                let informative: Vec<usize> = (0..x.ncols())
                    .filter(|&j| j == 0 || pair.iter().any(|&r| x[(r, j)] != x[(pair[0], j)]))
                    .collect();
                let xs = x.select_columns(&informative);
                let kept: Vec<String> = informative.iter().map(|&j| names[j].clone()).collect();
                let (b, s) = coefficient_pair(&xs, &pair, &y, draw, rng, |x, y| logistic(x, y, &kept))?;
                let mut beta = DVector::zeros(x.ncols());
                let mut star = DVector::zeros(x.ncols());
                for (k, &j) in informative.iter().enumerate() {
                    beta[j] = b[k];
                    star[j] = s[k];
                }
                for (i, &r) in obs.iter().enumerate() {
                    eta_obs[i][level] = x.row(r).transpose().dot(&beta);
                }
                for (i, &r) in mis.iter().enumerate() {
                    eta_mis[i][level] = x.row(r).transpose().dot(&star);
                }
            }
            Ok(Predictions {
                donors: eta_obs.into_iter().map(softmax).collect(),
                recipients: eta_mis.into_iter().map(softmax).collect(),
            })
        }
    }
}

fn softmax(eta: Vec<f64>) -> Vec<f64> {
    let top = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index into `donors` of one of the `k` nearest, chosen uniformly. Ties are
/// ordered by donor position so the choice is reproducible.
fn pick_donor(target: &[f64], donors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut d: Vec<(f64, usize)> = donors.iter().enumerate().map(|(i, p)| (distance(target, p), i)).collect();
    let k = k.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
    }
    d.truncate(k);
    d.sort_by(cmp);
    d[rng.gen_range(0..k)].1
}

pub(super) fn run_chain(
    ds: &Dataset,
    targets: &[usize],
    cfg: &ImputationConfig,
    chain: usize,
) -> Result<Dataset, ImputeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(chain as u64));
    let mut cols: Vec<Column> = ds.columns().cloned().collect();
    let weight = ds.weight_column();
    let usable: Vec<bool> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| Some(c.name.as_str()) != weight && (targets.contains(&j) || c.count_unobserved() == 0))
        .collect();
    let n = ds.n_rows();
    let split: Vec<(Vec<usize>, Vec<usize>)> = targets
        .iter()
        .map(|&t| (0..n).partition(|&r| cols[t].cells[r].is_observed()))
        .collect();

    // start from random draws of observed values
    for (&t, (obs, mis)) in targets.iter().zip(&split) {
        let mut cells = cols[t].cells.clone();
        for &r in mis {
            cells[r] = cols[t].cells[*obs.choose(&mut rng).unwrap()].clone();
        }
        cols[t] = replace_cells(&cols[t], cells);
    }

    for cycle in 1..=cfg.max_cycles {
        for (&t, (obs, mis)) in targets.iter().zip(&split) {
            let model_err = |source: GlmError| ImputeError::Model {
                cycle,
                variable: cols[t].name.clone(),
                source,
            };
            let design = predictors(&cols, t, &usable).map_err(model_err)?;
            let preds = predictions(&cols[t], &design.x, &design.names, obs, mis, cfg.parameter_draw, &mut rng)
                .map_err(model_err)?;
            let mut cells = cols[t].cells.clone();
            for (i, &r) in mis.iter().enumerate() {
                let donor = pick_donor(&preds.recipients[i], &preds.donors, cfg.donors, &mut rng);
                cells[r] = cols[t].cells[obs[donor]].clone();
            }
            cols[t] = replace_cells(&cols[t], cells);
        }
    }
    debug_assert!(targets.iter().all(|&t| cols[t].cells.iter().all(Cell::is_observed)));
    Ok(Dataset::new(cols, weight.map(str::to_string))?)
}
