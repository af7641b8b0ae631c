use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::marked::{sequences_to_experiment, simulate_marked_trials};
use super::recursion::{empirical_zeta, limit_zeta};
use super::spec::MarkedProcessSpec;
use crate::error::{Error, Result};
use crate::loglinear::one_based;
use crate::rng;
use crate::spikedata::bin_trains;

/// Joint counts below this make the estimate at that width unreliable.
const FEW_JOINT_EVENTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Bin widths, strictly decreasing, each below the refractory period.
    pub deltas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// 0-based neurons whose factor is tracked.
    pub subset: Vec<usize>,
    /// Delay of the second neuron, seconds (pairs only).
    #[serde(default)]
    pub lag: f64,
    /// Own-history window, seconds, for the history-stratified factor.
    #[serde(default)]
    pub history_window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub delta: f64,
    pub zeta_hat: Option<f64>,
    pub se: Option<f64>,
    /// Weighted small-bin limit over the bins.
    pub limit: f64,
    pub error: Option<f64>,
    pub joint_count: u64,
    pub single_probability: f64,
    pub joint_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    #[serde(with = "one_based")]
    pub subset: Vec<usize>,
    pub lag: f64,
    pub reps: usize,
    pub rows: Vec<ProbeRow>,
    /// Log-log slope of the error against the bin width.
    pub error_slope: Option<f64>,
    /// Log-log slopes of the single-neuron and joint firing probabilities.
    pub single_slope: Option<f64>,
    pub joint_slope: Option<f64>,
    /// Whether the error shrinks at every step down the grid.
    pub monotone: bool,
    pub warnings: Vec<String>,
}

/// Least-squares slope of `ln y` on `ln x` over the positive pairs.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn whole(x: f64, delta: f64, what: &str) -> Result<usize> {
    let q = x / delta;
    if (q - q.round()).abs() > 1e-6 * q.max(1.0) {
        return Err(Error::Argument(format!(
            "{what} {x} is not a whole number of {delta} s bins"
        )));
    }
    Ok(q.round() as usize)
}

/// Simulates the family at each bin width and compares the empirical factor
/// of `subset` with its small-bin limit.
pub fn convergence_probe(spec: &MarkedProcessSpec, opts: &ProbeOptions) -> Result<ConvergenceReport> {
    spec.validate()?;
    let k = opts.subset.len();
    if !(2..=8).contains(&k) || opts.subset.iter().any(|&i| i >= spec.nu) {
        return Err(Error::Argument("probe subset needs 2 to 8 neurons of the spec".into()));
    }
    if opts.deltas.is_empty() || opts.deltas.iter().any(|&d| !(d > 0.0 && d < spec.theta)) {
        return Err(Error::Argument("every bin width must lie in (0, theta)".into()));
    }
    if opts.deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument("bin widths must be strictly decreasing".into()));
    }
    if opts.reps == 0 {
        return Err(Error::Argument("need at least one repetition".into()));
    }
    if opts.lag > 0.0 && k != 2 {
        return Err(Error::Argument("lags are for pairs only".into()));
    }
    // interaction factors of spec marks, keyed by mask over subset positions
    let gamma_at = |mask: usize, t: f64| -> f64 {
        let members: Vec<usize> = (0..k)
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| opts.subset[j] + 1)
            .collect();
        let lag = if members.len() == 2 { opts.lag } else { 0.0 };
        spec.interactions
            .iter()
            .find(|x| {
                x.lag == lag
                    && if lag > 0.0 {
                        x.neurons == members
                    } else {
                        let mut s = x.neurons.clone();
                        s.sort_unstable();
                        let mut m = members.clone();
                        m.sort_unstable();
                        s == m
                    }
            })
            .map_or(0.0, |x| x.gamma.eval(t))
    };

    let rows = opts
        .deltas
        .par_iter()
        .enumerate()
        .map(|(step, &delta)| -> Result<ProbeRow> {
            let lag_bins = whole(opts.lag, delta, "lag")?;
            let window = opts
                .history_window
                .map(|w| whole(w, delta, "history window"))
                .transpose()?;
            let member = spec.with_delta(delta);
            let seqs = simulate_marked_trials(&member, opts.reps, rng::derive(opts.seed, step as u64))?;
            let binned = bin_trains(&sequences_to_experiment(&seqs)?, delta)?;
            let est = empirical_zeta(&binned, &opts.subset, lag_bins, window)?;
            let full = (1usize << k) - 1;
            let (mut num, mut den) = (0.0, 0.0);
            for (m, w) in est.weights.iter().enumerate() {
                let t = (m as f64 + 0.5) * delta;
                num += w * limit_zeta(full, &|mask| gamma_at(mask, t));
                den += w;
            }
            let limit = if den > 0.0 {
                num / den
            } else {
                limit_zeta(full, &|mask| gamma_at(mask, 0.0))
            };
            Ok(ProbeRow {
                delta,
                zeta_hat: est.pooled,
                se: est.pooled_se,
                limit,
                error: est.pooled.map(|z| (z - limit).abs()),
                joint_count: est.joint_count,
                single_probability: est.single_probability[0],
                joint_probability: est.joint_probability,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    for r in &rows {
        if r.joint_count < FEW_JOINT_EVENTS {
            warnings.push(format!(
                "only {} joint events at delta = {} s; the estimate there has a wide interval",
                r.joint_count, r.delta
            ));
        }
    }
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error.unwrap_or(f64::NAN)).collect();
    let monotone = errors.iter().all(|e| e.is_finite()) && errors.windows(2).all(|w| w[1] < w[0]);
    Ok(ConvergenceReport {
        subset: opts.subset.clone(),
        lag: opts.lag,
        reps: opts.reps,
        error_slope: log_log_slope(&deltas, &errors),
        single_slope: log_log_slope(&deltas, &rows.iter().map(|r| r.single_probability).collect::<Vec<_>>()),
        joint_slope: log_log_slope(&deltas, &rows.iter().map(|r| r.joint_probability).collect::<Vec<_>>()),
        monotone,
        warnings,
        rows,
    })
}
