use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{wald_from, DesignMatrix, GlmError, VarianceKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the max-abs score divided by the total weight.
    pub tol: f64,
    /// |coefficient| beyond which a still-falling deviance is reported as separation.
    pub separation_bound: f64,
    /// When false, non-convergence and separation return the last iterate
    /// with `converged = false` instead of an error.
    pub require_convergence: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            tol: 1e-10,
            separation_bound: 30.0,
            require_convergence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    /// Log-odds scale.
    pub coefficients: Vec<f64>,
    pub cov_model: DMatrix<f64>,
    pub cov_sandwich: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-abs weighted score divided by the total weight, at the returned coefficients.
    pub max_abs_score: f64,
    pub n_obs: usize,
    /// Fitted probabilities, aligned with the design rows.
    pub fitted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se_model: f64,
    pub se_sandwich: f64,
    pub z: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Serializable coefficient table; `z` and the interval use the sandwich SE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub coefficients: Vec<CoefficientRow>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub n_obs: usize,
}

impl FitResult {
    pub fn coefficient_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn se(&self, index: usize, kind: VarianceKind) -> f64 {
        let cov = match kind {
            VarianceKind::ModelBased => &self.cov_model,
            VarianceKind::Sandwich => &self.cov_sandwich,
        };
        cov[(index, index)].max(0.0).sqrt()
    }

    pub fn report(&self, level: f64) -> FitReport {
        let coefficients = self
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let est = self.coefficients[j];
                let se_s = self.se(j, VarianceKind::Sandwich);
                let (ci_lo, ci_hi) = wald_from(est, se_s, level);
                CoefficientRow {
                    name: name.clone(),
                    estimate: est,
                    se_model: self.se(j, VarianceKind::ModelBased),
                    se_sandwich: se_s,
                    z: est / se_s,
                    ci_lo,
                    ci_hi,
                }
            })
            .collect();
        FitReport {
            coefficients,
            iterations: self.iterations,
            converged: self.converged,
            log_likelihood: self.log_likelihood,
            n_obs: self.n_obs,
        }
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^eta) without overflow
fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn log_likelihood(eta: &DVector<f64>, y: &[f64], w: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| if wi == 0.0 { 0.0 } else { wi * (yi * e - log1p_exp(e)) })
        .sum()
}

fn gradient(xm: &DMatrix<f64>, eta: &DVector<f64>, y: &[f64], w: &[f64]) -> DVector<f64> {
    let resid = DVector::from_iterator(y.len(), eta.iter().enumerate().map(|(i, &e)| w[i] * (y[i] - sigmoid(e))));
    xm.tr_mul(&resid)
}

/// Weighted Bernoulli log-likelihood at `beta`.
pub fn log_likelihood_at(x: &DesignMatrix, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    log_likelihood(&(&x.x * DVector::from_column_slice(beta)), y, w)
}

/// Gradient of [`log_likelihood_at`]: `X' W (y - p)`.
pub fn score(x: &DesignMatrix, y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
    let eta = &x.x * DVector::from_column_slice(beta);
    gradient(&x.x, &eta, y, w).iter().copied().collect()
}

/// Columns whose weighted Gram-Schmidt residual vanishes relative to their norm.
pub(crate) fn collinear_columns(x: &DMatrix<f64>, w: &[f64], names: &[String]) -> Vec<String> {
    let p = x.ncols();
    let mut xs = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        xs.row_mut(i).scale_mut(wi.sqrt());
    }
    let g = xs.tr_mul(&xs);
    let d: Vec<f64> = (0..p).map(|j| g[(j, j)].sqrt()).collect();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut active = vec![false; p];
    let mut dependent = Vec::new();
    for j in 0..p {
        if d[j] == 0.0 {
            dependent.push(names[j].clone());
            continue;
        }
        let mut sq = 0.0;
        for k in (0..j).filter(|&k| active[k]) {
            let c = g[(j, k)] / (d[j] * d[k]);
            let s: f64 = (0..k).filter(|&m| active[m]).map(|m| l[(j, m)] * l[(k, m)]).sum();
            l[(j, k)] = (c - s) / l[(k, k)];
            sq += l[(j, k)] * l[(j, k)];
        }
        let pivot = 1.0 - sq;
        if pivot < 1e-10 {
            dependent.push(names[j].clone());
        } else {
            l[(j, j)] = pivot.sqrt();
            active[j] = true;
        }
    }
    dependent
}

fn scaled_gram(x: &DMatrix<f64>, scale: &[f64]) -> DMatrix<f64> {
    let mut xs = x.clone();
    for (i, &s) in scale.iter().enumerate() {
        xs.row_mut(i).scale_mut(s);
    }
    xs.tr_mul(&xs)
}

/// Maximizes the weighted Bernoulli log-likelihood by IRLS from beta = 0,
/// halving steps that increase the deviance.
pub fn fit_logistic(x: &DesignMatrix, y: &[f64], w: &[f64], opts: &FitOptions) -> Result<FitResult, GlmError> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || w.len() != n {
        return Err(GlmError::InvalidInput(format!(
            "design has {n} rows but y has {} and w has {}",
            y.len(),
            w.len()
        )));
    }
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(GlmError::InvalidInput(format!("response at row {} is not 0/1", i + 1)));
    }
    if let Some(i) = w.iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(GlmError::InvalidInput(format!("weight at row {} is not finite and non-negative", i + 1)));
    }
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return Err(GlmError::InvalidInput("all weights are zero".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(GlmError::InvalidInput("tolerance must be positive".into()));
    }
    let dependent = collinear_columns(&x.x, w, &x.names);
    if !dependent.is_empty() {
        return Err(GlmError::RankDeficient { columns: dependent });
    }

    let xm = &x.x;
    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = xm * &beta;
    let mut ll = log_likelihood(&eta, y, w);
    let mut iterations = 0;
    let mut converged = false;
    let mut max_abs_score;
    loop {
        let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let score = gradient(xm, &eta, y, w) / sw;
        max_abs_score = score.amax();
        if max_abs_score < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let root: Vec<f64> = (0..n).map(|i| (w[i] * probs[i] * (1.0 - probs[i]) / sw).sqrt()).collect();
        let info = scaled_gram(xm, &root);
        let Some(chol) = info.cholesky() else {
            // curvature collapsed: fitted probabilities at 0/1
            if beta.amax() > 10.0 {
                if !opts.require_convergence {
                    break;
                }
                return Err(GlmError::Separation {
                    iteration: iterations,
                    max_abs_coefficient: beta.amax(),
                });
            }
            return Err(GlmError::RankDeficient {
                columns: x.names.clone(),
            });
        };
        let delta = chol.solve(&score);
        let mut step = 1.0;
        let (new_beta, new_eta, new_ll) = loop {
            let cand = &beta + &delta * step;
            let cand_eta = xm * &cand;
            let cand_ll = log_likelihood(&cand_eta, y, w);
            if cand_ll >= ll - 1e-12 * ll.abs() || step < 1e-10 {
                break (cand, cand_eta, cand_ll);
            }
            step *= 0.5;
        };
        iterations += 1;
        let improving = new_ll > ll;
        beta = new_beta;
        eta = new_eta;
        ll = new_ll;
        if beta.amax() > opts.separation_bound && improving {
            if !opts.require_convergence {
                break;
            }
            return Err(GlmError::Separation {
                iteration: iterations,
                max_abs_coefficient: beta.amax(),
            });
        }
    }
    if !converged && opts.require_convergence {
        return Err(GlmError::NonConvergence {
            iterations,
            max_abs_score,
        });
    }

    let fitted: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let root: Vec<f64> = (0..n).map(|i| (w[i] * fitted[i] * (1.0 - fitted[i])).sqrt()).collect();
    let bread = scaled_gram(xm, &root);
    let (cov_model, cov_sandwich) = match bread.clone().try_inverse() {
        Some(a_inv) => {
            let a_inv = (&a_inv + a_inv.transpose()) * 0.5;
            let meat_scale: Vec<f64> = (0..n).map(|i| (w[i] * (y[i] - fitted[i])).abs()).collect();
            let meat = scaled_gram(xm, &meat_scale);
            let s = &a_inv * meat * &a_inv;
            let s = (&s + s.transpose()) * 0.5;
            (a_inv, s)
        }
        None => (DMatrix::from_element(p, p, f64::NAN), DMatrix::from_element(p, p, f64::NAN)),
    };
    Ok(FitResult {
        names: x.names.clone(),
        coefficients: beta.iter().copied().collect(),
        cov_model,
        cov_sandwich,
        log_likelihood: ll,
        iterations,
        converged,
        max_abs_score,
        n_obs: n,
        fitted,
    })
}
