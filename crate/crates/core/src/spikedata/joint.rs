use serde::{Deserialize, Serialize};

use super::BinnedTensor;
use crate::error::{Error, Result};

/// Bins where every neuron of a subset fired together (or, with a lag, where
/// the first fired at `m` and the second at `m + lag`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEventSet {
    subset: Vec<usize>,
    lag_bins: usize,
    exclusive: bool,
    delta: f64,
    bins: usize,
    events: Vec<Vec<usize>>,
}

impl JointEventSet {
    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn lag_bins(&self) -> usize {
        self.lag_bins
    }

    pub fn exclusive(&self) -> bool {
        self.exclusive
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn trials(&self) -> usize {
        self.events.len()
    }

    /// Bins per trial in the source tensor.
    pub fn source_bins(&self) -> usize {
        self.bins
    }

    /// Event bin indices (of the first neuron, in lag mode) for each trial.
    pub fn events(&self) -> &[Vec<usize>] {
        &self.events
    }

    pub fn count(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    /// Joint events per bin, pooled over trials.
    pub fn counts_per_bin(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.bins];
        for m in self.events.iter().flatten() {
            counts[*m] += 1;
        }
        counts
    }
}

pub fn extract_joint_events(
    binned: &BinnedTensor,
    subset: &[usize],
    lag_bins: usize,
    exclusive: bool,
) -> Result<JointEventSet> {
    if subset.len() < 2 {
        return Err(Error::Argument("a joint event needs at least two neurons".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= binned.neurons()) {
        return Err(Error::Argument(format!(
            "neuron {} out of range (have {})",
            bad + 1,
            binned.neurons()
        )));
    }
    for (k, a) in subset.iter().enumerate() {
        if subset[k + 1..].contains(a) {
            return Err(Error::Argument(format!("neuron {} listed twice", a + 1)));
        }
    }
    if lag_bins >= binned.bins() {
        return Err(Error::Argument(format!(
            "lag of {lag_bins} bins is not shorter than the {} available",
            binned.bins()
        )));
    }
    if lag_bins > 0 && subset.len() != 2 {
        return Err(Error::Argument("lagged events are defined for pairs only".into()));
    }
    if lag_bins > 0 && exclusive {
        return Err(Error::Argument("exclusive matching applies to zero lag only".into()));
    }

    let others: Vec<usize> = (0..binned.neurons()).filter(|i| !subset.contains(i)).collect();
    let span = binned.bins() - lag_bins;
    let mut events = Vec::with_capacity(binned.trials());
    for r in 0..binned.trials() {
        let mut hits = Vec::new();
        if lag_bins > 0 {
            let (first, second) = (binned.row(r, subset[0]), binned.row(r, subset[1]));
            for m in 0..span {
                if first[m] == 1 && second[m + lag_bins] == 1 {
                    hits.push(m);
                }
            }
        } else {
            for m in 0..span {
                if subset.iter().all(|&i| binned.get(r, i, m) == 1)
                    && (!exclusive || others.iter().all(|&i| binned.get(r, i, m) == 0))
                {
                    hits.push(m);
                }
            }
        }
        events.push(hits);
    }
    Ok(JointEventSet {
        subset: subset.to_vec(),
        lag_bins,
        exclusive,
        delta: binned.delta(),
        bins: binned.bins(),
        events,
    })
}
