//! Multi-trial, multi-neuron event-stream data.
//!
//! Neuron and trial indices are 0-based in the API and 1-based in every file
//! and report.

mod binned;
mod io;
mod joint;

pub use binned::{bin_index, bin_trains, BinnedTensor};
pub use io::{
    load_experiment, load_with_sidecar, read_experiment, save_experiment, sidecar_path, write_experiment, Format,
    Metadata,
};
pub use joint::{extract_joint_events, JointEventSet};

use crate::error::{Error, Result};

/// Event times of one neuron on one trial, strictly ascending in `[0, T)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeTrain {
    times: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(times: Vec<f64>, duration: f64) -> Result<Self> {
        for (k, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 || t >= duration {
                return Err(Error::Validation(format!("spike time {t} outside [0, {duration})")));
            }
            if k > 0 && times[k - 1] >= t {
                return Err(Error::Validation(format!("spike times not strictly increasing at {t}")));
            }
        }
        Ok(Self { times })
    }

    /// Sorts first; identical times are still rejected.
    pub fn from_unsorted(mut times: Vec<f64>, duration: f64) -> Result<Self> {
        times.sort_by(|a, b| a.total_cmp(b));
        Self::new(times, duration)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Trials of `nu` spike trains each, sharing one duration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    duration: f64,
    neuron_count: usize,
    trials: Vec<Vec<SpikeTrain>>,
}

impl ExperimentData {
    pub fn new(duration: f64, neuron_count: usize, trials: Vec<Vec<SpikeTrain>>) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Validation(format!("duration must be positive, got {duration}")));
        }
        if neuron_count == 0 {
            return Err(Error::Validation("neuron count must be positive".into()));
        }
        for (r, trial) in trials.iter().enumerate() {
            if trial.len() != neuron_count {
                return Err(Error::Validation(format!(
                    "trial {} has {} trains, expected {neuron_count}",
                    r + 1,
                    trial.len()
                )));
            }
            for train in trial {
                if let Some(&last) = train.times().last() {
                    if last >= duration {
                        return Err(Error::Validation(format!("spike time {last} outside [0, {duration})")));
                    }
                }
            }
        }
        Ok(Self {
            duration,
            neuron_count,
            trials,
        })
    }

    pub fn empty(duration: f64, neuron_count: usize, trial_count: usize) -> Result<Self> {
        Self::new(
            duration,
            neuron_count,
            vec![vec![SpikeTrain::default(); neuron_count]; trial_count],
        )
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn neuron_count(&self) -> usize {
        self.neuron_count
    }

    pub fn trial_count(&self) -> usize {
        self.trials.len()
    }

    pub fn trials(&self) -> &[Vec<SpikeTrain>] {
        &self.trials
    }

    pub fn train(&self, trial: usize, neuron: usize) -> &SpikeTrain {
        &self.trials[trial][neuron]
    }

    pub fn spike_count(&self) -> usize {
        self.trials.iter().flatten().map(SpikeTrain::len).sum()
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            duration: self.duration,
            nu: self.neuron_count,
            n_trials: self.trials.len(),
        }
    }

    /// Keeps the listed trials, in the given order.
    pub fn select_trials(&self, trials: &[usize]) -> Self {
        Self {
            duration: self.duration,
            neuron_count: self.neuron_count,
            trials: trials.iter().map(|&r| self.trials[r].clone()).collect(),
        }
    }
}
