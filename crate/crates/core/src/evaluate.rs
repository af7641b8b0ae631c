//! Cross-validated ROC comparison of joint-spike predictions.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{
    build_conditional_design, build_marginal_design, fit_poisson_irls, HistoryCovariateSpec, IntensityFit, IrlsOptions,
    SplineBasis,
};
use crate::loglinear::{estimate_xi_pair, Mode};
use crate::rng;
use crate::spikedata::{extract_joint_events, BinnedTensor};

/// Points of an ROC curve. `fpr[0] = tpr[0] = 0` is the cutoff above every
/// score; point `k > 0` predicts every score `>= thresholds[k - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<output>", e);
        writeln!(out, "threshold,fpr,tpr").map_err(io)?;
        writeln!(out, "inf,0,0").map_err(io)?;
        for k in 0..self.thresholds.len() {
            writeln!(out, "{},{},{}", self.thresholds[k], self.fpr[k + 1], self.tpr[k + 1]).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Scores sorted into groups of equal value, highest first.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let (pos, neg) = if labels[i] { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == scores[i] => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((scores[i], pos, neg)),
        }
    }
    groups
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 {
        return Err(Error::DegenerateRoc("no positive labels".into()));
    }
    if negatives == 0 {
        return Err(Error::DegenerateRoc("no negative labels".into()));
    }
    Ok((positives, negatives))
}

/// One threshold between each pair of distinct scores; tied scores move
/// together, so the AUC counts ties as one half.
pub fn roc_from_scores(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (positives, negatives) = check_scores(scores, labels)?;
    let (p, n) = (positives as f64, negatives as f64);
    let mut curve = RocCurve {
        thresholds: Vec::new(),
        fpr: vec![0.0],
        tpr: vec![0.0],
        auc: 0.0,
        positives,
        negatives,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    for (score, pos, neg) in tie_groups(scores, labels) {
        let (x0, y0) = (fp as f64 / n, tp as f64 / p);
        tp += pos;
        fp += neg;
        let (x1, y1) = (fp as f64 / n, tp as f64 / p);
        curve.auc += (x1 - x0) * (y0 + y1) / 2.0;
        curve.thresholds.push(score);
        curve.fpr.push(x1);
        curve.tpr.push(y1);
    }
    Ok(curve)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from midranks.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (positives, negatives) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[k]] {
            j += 1;
        }
        let mid = (k + j) as f64 / 2.0 + 1.0;
        rank_sum += order[k..=j].iter().filter(|&&i| labels[i]).count() as f64 * mid;
        k = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBin {
    pub trial: usize,
    pub bin: usize,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub basis: SplineBasis,
    /// History covariates for the conditional model.
    pub history: HistoryCovariateSpec,
    pub irls: IrlsOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRoc {
    pub mode: Mode,
    pub folds: usize,
    pub seed: u64,
    pub curve: RocCurve,
    pub scores: Vec<ScoredBin>,
}

/// Trials of each fold after a seeded shuffle, each fold sorted.
pub fn fold_assignment(trials: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || trials < folds {
        return Err(Error::Argument(format!(
            "need 2 <= folds <= trials, got {folds} folds for {trials} trials"
        )));
    }
    let mut order: Vec<usize> = (0..trials).collect();
    order.shuffle(&mut rng::root(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, r) in order.into_iter().enumerate() {
        out[k % folds].push(r);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

fn fit_one(train: &BinnedTensor, neuron: usize, mode: Mode, opts: &CvOptions) -> Result<IntensityFit> {
    let design = match mode {
        Mode::Marginal => build_marginal_design(train, neuron, &opts.basis)?,
        Mode::Conditional => build_conditional_design(train, neuron, &opts.basis, &opts.history)?,
    };
    fit_poisson_irls(&design, &opts.irls)
}

/// K-fold cross-validated scores `log lambda12` for every held-out bin of
/// `pair`, pooled into one ROC. Intensities and the excess-synchrony factor
/// are refitted on each fold's training trials; conditional scores use the
/// held-out trial's own realized history.
pub fn cv_roc(binned: &BinnedTensor, pair: [usize; 2], mode: Mode, opts: &CvOptions) -> Result<CvRoc> {
    if pair[0] == pair[1] || pair.iter().any(|&i| i >= binned.neurons()) {
        return Err(Error::Argument("need two distinct neurons in range".into()));
    }
    let folds = fold_assignment(binned.trials(), opts.folds, opts.seed)?;
    let per_fold = folds
        .par_iter()
        .enumerate()
        .map(|(k, test)| -> Result<Vec<ScoredBin>> {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let train = binned.select_trials(&train_idx);
            let held = binned.select_trials(test);
            let f1 = fit_one(&train, pair[0], mode, opts)?;
            let f2 = fit_one(&train, pair[1], mode, opts)?;
            let ev = extract_joint_events(&train, &pair, 0, false)?;
            let est = estimate_xi_pair(&ev, &f1, &f2, mode, &train)?;
            // half an event keeps the log finite when training has none
            let log_xi = if est.n_joint > 0 {
                est.xi_hat.ln()
            } else {
                (0.5 / est.expected_joint).ln()
            };
            let (g1, g2) = (f1.rates_on(&held)?, f2.rates_on(&held)?);
            let mut out = Vec::with_capacity(test.len() * binned.bins());
            for (h, &r) in test.iter().enumerate() {
                let (a, b) = (held.row(h, pair[0]), held.row(h, pair[1]));
                for m in 0..binned.bins() {
                    out.push(ScoredBin {
                        trial: r,
                        bin: m,
                        score: log_xi + g1.at(h, m).ln() + g2.at(h, m).ln(),
                        label: a[m] == 1 && b[m] == 1,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<ScoredBin> = per_fold.into_iter().flatten().collect();
    let s: Vec<f64> = scores.iter().map(|x| x.score).collect();
    let l: Vec<bool> = scores.iter().map(|x| x.label).collect();
    let curve = roc_from_scores(&s, &l)?;
    Ok(CvRoc {
        mode,
        folds: opts.folds,
        seed: opts.seed,
        curve,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Scores at or above this are predicted joint; `None` predicts nothing.
    pub threshold: Option<f64>,
    pub predicted: Vec<(usize, usize)>,
    pub fpr: f64,
    pub tpr: f64,
}

/// Predicts the largest set of bins whose false-positive rate stays within
/// `target_fpr`; tied scores are predicted together or not at all.
pub fn predict_joint_at_fpr(scored: &[ScoredBin], target_fpr: f64) -> Result<Prediction> {
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::Argument("target false-positive rate must lie in [0, 1]".into()));
    }
    let s: Vec<f64> = scored.iter().map(|x| x.score).collect();
    let l: Vec<bool> = scored.iter().map(|x| x.label).collect();
    let curve = roc_from_scores(&s, &l)?;
    let mut best = 0;
    for k in 1..curve.fpr.len() {
        if curve.fpr[k] <= target_fpr {
            best = k;
        }
    }
    let threshold = (best > 0).then(|| curve.thresholds[best - 1]);
    let predicted = match threshold {
        Some(t) => scored
            .iter()
            .filter(|x| x.score >= t)
            .map(|x| (x.trial, x.bin))
            .collect(),
        None => Vec::new(),
    };
    Ok(Prediction {
        threshold,
        predicted,
        fpr: curve.fpr[best],
        tpr: curve.tpr[best],
    })
}
