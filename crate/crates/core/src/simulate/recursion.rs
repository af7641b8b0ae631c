use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loglinear::one_based;
use crate::spikedata::BinnedTensor;

/// Empirical interaction factors from many realizations (the trials of the
/// tensor), computed bottom-up: `zeta_S = P_S / (prod_i P_i prod_U zeta_U)`
/// over the proper subsets `U` of `S` with two or more neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalZeta {
    #[serde(with = "one_based")]
    pub subset: Vec<usize>,
    pub lag_bins: usize,
    pub delta: f64,
    /// Own-history window (bins) used to stratify, if any.
    pub history_window: Option<usize>,
    /// Per-bin factor; `None` where a denominator vanishes.
    pub per_bin: Vec<Option<f64>>,
    /// Ratio of summed joint counts to summed independence expectations.
    pub pooled: Option<f64>,
    /// Approximate standard error of `pooled` (Poisson on the joint count).
    pub pooled_se: Option<f64>,
    pub joint_count: u64,
    /// Each bin's share of the pooled denominator.
    pub weights: Vec<f64>,
    /// Mean over bins of each neuron's firing probability.
    pub single_probability: Vec<f64>,
    /// Mean over bins of the joint firing probability.
    pub joint_probability: f64,
}

/// Counts for one stratum: occupancy and per-mask joint counts.
struct Unit {
    n: f64,
    counts: Vec<f64>,
}

/// Factors for every mask (index = mask; entries for fewer than two
/// neurons are 1) from the given units, or `None` where undefined.
fn pooled_factors(units: &[&Unit], k: usize, fixed: Option<&[Option<f64>]>) -> Vec<Option<f64>> {
    let size = 1usize << k;
    let mut zeta: Vec<Option<f64>> = vec![Some(1.0); size];
    let mut order: Vec<usize> = (0..size).filter(|m| m.count_ones() >= 2).collect();
    order.sort_by_key(|m| m.count_ones());
    for &mask in &order {
        let lower = proper_factor(mask, fixed.unwrap_or(&zeta));
        let Some(lower) = lower else {
            zeta[mask] = None;
            continue;
        };
        let (mut num, mut den) = (0.0, 0.0);
        for u in units {
            if u.n == 0.0 {
                continue;
            }
            num += u.counts[mask];
            den += u.n
                * lower
                * (0..k)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| u.counts[1 << i] / u.n)
                    .product::<f64>();
        }
        zeta[mask] = (den > 0.0).then(|| num / den);
    }
    zeta
}

/// Product of the factors of the proper subsets of `mask` with two or more bits.
fn proper_factor(mask: usize, zeta: &[Option<f64>]) -> Option<f64> {
    let mut prod = 1.0;
    let mut sub = (mask - 1) & mask;
    while sub > 0 {
        if sub.count_ones() >= 2 {
            prod *= zeta[sub]?;
        }
        sub = (sub - 1) & mask;
    }
    Some(prod)
}

pub fn empirical_zeta(
    binned: &BinnedTensor,
    subset: &[usize],
    lag_bins: usize,
    history_window: Option<usize>,
) -> Result<EmpiricalZeta> {
    let k = subset.len();
    if !(2..=8).contains(&k) || subset.iter().any(|&i| i >= binned.neurons()) {
        return Err(Error::Argument("subset needs 2 to 8 neurons in range".into()));
    }
    if lag_bins > 0 && k != 2 {
        return Err(Error::Argument("lags are for pairs only".into()));
    }
    if lag_bins >= binned.bins() {
        return Err(Error::Argument("lag exceeds the recording".into()));
    }
    if history_window == Some(0) {
        return Err(Error::Argument("history window must be at least one bin".into()));
    }
    let span = binned.bins() - lag_bins;
    let size = 1usize << k;
    let strata = if history_window.is_some() { size } else { 1 };
    let shift = |j: usize| if j == 1 { lag_bins } else { 0 };
    let mut units: Vec<Unit> = (0..span * strata)
        .map(|_| Unit {
            n: 0.0,
            counts: vec![0.0; size],
        })
        .collect();
    for r in 0..binned.trials() {
        let rows: Vec<&[u8]> = subset.iter().map(|&i| binned.row(r, i)).collect();
        for m in 0..span {
            let mut pattern = 0usize;
            let mut stratum = 0usize;
            for j in 0..k {
                let b = m + shift(j);
                pattern |= (rows[j][b] as usize) << j;
                if let Some(w) = history_window {
                    let recent = rows[j][b.saturating_sub(w)..b].contains(&1);
                    stratum |= (recent as usize) << j;
                }
            }
            let u = &mut units[m * strata + stratum];
            u.n += 1.0;
            // every mask contained in the firing pattern gains one count
            let mut sub = pattern;
            while sub > 0 {
                u.counts[sub] += 1.0;
                sub = (sub - 1) & pattern;
            }
        }
    }
    let full = size - 1;
    let all: Vec<&Unit> = units.iter().collect();
    let pooled_all = pooled_factors(&all, k, None);
    let lower = proper_factor(full, &pooled_all);
    let mut per_bin = Vec::with_capacity(span);
    let mut weights = Vec::with_capacity(span);
    let mut single = vec![0.0; k];
    let mut joint_probability = 0.0;
    let trials = binned.trials() as f64;
    for m in 0..span {
        let bin_units: Vec<&Unit> = units[m * strata..(m + 1) * strata].iter().collect();
        per_bin.push(pooled_factors(&bin_units, k, None)[full]);
        let mut w = 0.0;
        let mut joint = 0.0;
        for u in &bin_units {
            for (j, s) in single.iter_mut().enumerate() {
                *s += u.counts[1 << j] / trials;
            }
            joint += u.counts[full];
            if u.n > 0.0 {
                w += u.n * (0..k).map(|j| u.counts[1 << j] / u.n).product::<f64>();
            }
        }
        joint_probability += joint / trials;
        weights.push(w * lower.unwrap_or(0.0));
    }
    single.iter_mut().for_each(|s| *s /= span as f64);
    joint_probability /= span as f64;
    let joint_count = units.iter().map(|u| u.counts[full]).sum::<f64>() as u64;
    let pooled = pooled_all[full];
    Ok(EmpiricalZeta {
        subset: subset.to_vec(),
        lag_bins,
        delta: binned.delta(),
        history_window,
        per_bin,
        pooled,
        pooled_se: pooled
            .filter(|_| joint_count > 0)
            .map(|z| z / (joint_count as f64).sqrt()),
        joint_count,
        weights,
        single_probability: single,
        joint_probability,
    })
}

/// Sum over the set partitions of `mask` of the product of block factors,
/// where `gamma(block)` is 1 for single neurons.
pub fn partition_sum(mask: usize, gamma: &dyn Fn(usize) -> f64) -> f64 {
    if mask == 0 {
        return 1.0;
    }
    let low = mask & mask.wrapping_neg();
    let rest = mask ^ low;
    // blocks containing the lowest member: low plus any subset of rest
    let mut total = 0.0;
    let mut sub = rest;
    loop {
        let block = low | sub;
        let g = if block.count_ones() == 1 { 1.0 } else { gamma(block) };
        if g != 0.0 {
            total += g * partition_sum(rest ^ sub, gamma);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    total
}

/// Small-bin limit of the empirical factor for `mask`: the partition sum
/// divided by the limits of all proper subsets with two or more members.
pub fn limit_zeta(mask: usize, gamma: &dyn Fn(usize) -> f64) -> f64 {
    let mut denom = 1.0;
    let mut sub = (mask - 1) & mask;
    while sub > 0 {
        if sub.count_ones() >= 2 {
            denom *= limit_zeta(sub, gamma);
        }
        sub = (sub - 1) & mask;
    }
    partition_sum(mask, gamma) / denom
}
