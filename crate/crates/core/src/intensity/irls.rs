//! Poisson regression with log link by iteratively reweighted least squares.
//!
//! Each iteration solves `(X'WX + eps I) beta = X'W z` with working weights
//! `W = mu` and working response `z = eta - offset + (y - mu) / mu`, i.e. one
//! Newton step on the ridge-penalized log-likelihood. A step that raises the
//! penalized deviance is halved until it does not.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    /// Relative change in penalized deviance that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Ridge penalty on every coefficient.
    pub ridge: f64,
    /// Any |coefficient| above this is reported as separation.
    pub coef_limit: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 10,
            ridge: 0.0,
            coef_limit: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsOutcome {
    pub coefficients: Vec<f64>,
    /// Unpenalized Poisson deviance.
    pub deviance: f64,
    pub loglik: f64,
    pub iterations: usize,
    /// Fitted means `exp(x beta + offset)`.
    pub fitted: Vec<f64>,
}

const ETA_MAX: f64 = 700.0;

fn linear_predictor(x: &[f64], cols: usize, beta: &[f64], offset: &[f64], out: &mut [f64]) {
    for (k, eta) in out.iter_mut().enumerate() {
        let row = &x[k * cols..(k + 1) * cols];
        *eta = offset[k] + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

fn penalty(beta: &[f64], ridge: f64) -> f64 {
    ridge * beta.iter().map(|b| b * b).sum::<f64>()
}

/// Poisson log-likelihood `sum(y eta - exp(eta) - ln y!)`.
pub fn poisson_loglik(x: &[f64], cols: usize, y: &[f64], offset: &[f64], beta: &[f64]) -> f64 {
    let mut eta = vec![0.0; y.len()];
    linear_predictor(x, cols, beta, offset, &mut eta);
    y.iter()
        .zip(&eta)
        .map(|(&y, &e)| y * e - e.min(ETA_MAX).exp() - ln_gamma(y + 1.0))
        .sum()
}

/// Gradient of [`poisson_loglik`]: `X'(y - mu)`.
pub fn poisson_score(x: &[f64], cols: usize, y: &[f64], offset: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut eta = vec![0.0; y.len()];
    linear_predictor(x, cols, beta, offset, &mut eta);
    let mut score = vec![0.0; cols];
    for (k, &e) in eta.iter().enumerate() {
        let resid = y[k] - e.min(ETA_MAX).exp();
        for (s, &xv) in score.iter_mut().zip(&x[k * cols..(k + 1) * cols]) {
            *s += xv * resid;
        }
    }
    score
}

/// Solves one weighted ridge least-squares problem over the active columns.
fn weighted_solve(
    x: &[f64],
    cols: usize,
    active: &[usize],
    weights: &[f64],
    z: &[f64],
    ridge: f64,
) -> Option<Vec<f64>> {
    let p = active.len();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwz = DVector::<f64>::zeros(p);
    let mut buf = vec![0.0; p];
    for (k, (&w, &zk)) in weights.iter().zip(z).enumerate() {
        let row = &x[k * cols..(k + 1) * cols];
        for (b, &j) in buf.iter_mut().zip(active) {
            *b = row[j];
        }
        for a in 0..p {
            let wa = w * buf[a];
            if wa == 0.0 {
                continue;
            }
            xtwz[a] += wa * zk;
            for b in a..p {
                xtwx[(a, b)] += wa * buf[b];
            }
        }
    }
    for a in 0..p {
        xtwx[(a, a)] += ridge;
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    let chol = xtwx.cholesky()?;
    let sol = chol.solve(&xtwz);
    let mut beta = vec![0.0; cols];
    for (a, &j) in active.iter().enumerate() {
        beta[j] = sol[a];
    }
    Some(beta)
}

/// Fits `log E[y] = X beta + offset`. Columns that are identically zero carry
/// no information and are pinned at 0.
pub fn irls_poisson(x: &[f64], cols: usize, y: &[f64], offset: &[f64], opts: &IrlsOptions) -> Result<IrlsOutcome> {
    let n = y.len();
    if n == 0 || cols == 0 || x.len() != n * cols || offset.len() != n {
        return Err(Error::Argument("design is empty or has inconsistent dimensions".into()));
    }
    if y.iter().any(|&v| !(v >= 0.0) || v.fract() != 0.0) {
        return Err(Error::Argument("responses must be nonnegative integers".into()));
    }
    let active: Vec<usize> = (0..cols).filter(|&j| (0..n).any(|k| x[k * cols + j] != 0.0)).collect();
    let singular = || Error::DegenerateModel("weighted normal equations are singular; add a ridge penalty".into());

    let mut eta = vec![0.0; n];
    let mut mu = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut z = vec![0.0; n];

    // Start from the saturated-ish fit mu = y + 0.1.
    for k in 0..n {
        let m0 = y[k] + 0.1;
        weights[k] = m0;
        z[k] = m0.ln() - offset[k];
    }
    let mut beta = weighted_solve(x, cols, &active, &weights, &z, opts.ridge).ok_or_else(singular)?;
    let evaluate = |beta: &[f64], eta: &mut [f64], mu: &mut [f64]| {
        linear_predictor(x, cols, beta, offset, eta);
        for (m, &e) in mu.iter_mut().zip(eta.iter()) {
            *m = e.min(ETA_MAX).exp();
        }
        deviance(y, mu) + penalty(beta, opts.ridge)
    };
    let mut objective = evaluate(&beta, &mut eta, &mut mu);
    let mut last_change = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        for k in 0..n {
            let m = mu[k].max(1e-300);
            weights[k] = m;
            z[k] = eta[k] - offset[k] + (y[k] - m) / m;
        }
        let proposal = weighted_solve(x, cols, &active, &weights, &z, opts.ridge).ok_or_else(singular)?;
        let mut candidate = proposal;
        let mut new_objective = evaluate(&candidate, &mut eta, &mut mu);
        let slack = 1e-12 * (objective.abs() + 1.0);
        let mut halvings = 0;
        while !(new_objective <= objective + slack) && halvings < opts.max_halvings {
            for (c, b) in candidate.iter_mut().zip(&beta) {
                *c = 0.5 * (*c + b);
            }
            new_objective = evaluate(&candidate, &mut eta, &mut mu);
            halvings += 1;
        }
        if !(new_objective <= objective + slack) {
            // No descent direction left at float precision: keep the last iterate.
            evaluate(&beta, &mut eta, &mut mu);
            return Ok(outcome(x, cols, y, offset, beta, mu, iter));
        }
        if let Some((index, &value)) = candidate
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() > opts.coef_limit || !b.is_finite())
        {
            return Err(Error::Separation { index, value });
        }
        last_change = (objective - new_objective).abs() / (new_objective.abs() + 0.1);
        beta = candidate;
        objective = new_objective;
        if last_change < opts.tol {
            return Ok(outcome(x, cols, y, offset, beta, mu, iter));
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        last_change,
        last_iterate: beta,
    })
}

fn outcome(
    x: &[f64],
    cols: usize,
    y: &[f64],
    offset: &[f64],
    beta: Vec<f64>,
    mu: Vec<f64>,
    iterations: usize,
) -> IrlsOutcome {
    IrlsOutcome {
        loglik: poisson_loglik(x, cols, y, offset, &beta),
        deviance: deviance(y, &mu),
        coefficients: beta,
        iterations,
        fitted: mu,
    }
}
