use super::ExperimentData;
use crate::error::{Error, Result};

/// Ratio `x / delta` snapped to the nearest integer when within float noise,
/// floored otherwise.
fn snapped_floor(x: f64, delta: f64) -> f64 {
    let q = x / delta;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        q.floor()
    }
}

/// Bin holding time `t` at resolution `delta`: `floor(t / delta)`.
pub fn bin_index(t: f64, delta: f64) -> usize {
    snapped_floor(t, delta).max(0.0) as usize
}

/// Binary occupancy indicators `X^i(t_m)`, laid out trial-major then neuron
/// then bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedTensor {
    delta: f64,
    trials: usize,
    neurons: usize,
    bins: usize,
    data: Vec<u8>,
    clamp_count: usize,
    tail_duration: f64,
    tail_spikes: usize,
}

impl BinnedTensor {
    pub fn from_raw(delta: f64, trials: usize, neurons: usize, bins: usize, data: Vec<u8>) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Argument(format!("bin width must be positive, got {delta}")));
        }
        if data.len() != trials * neurons * bins {
            return Err(Error::Argument(format!(
                "expected {} indicators, got {}",
                trials * neurons * bins,
                data.len()
            )));
        }
        if data.iter().any(|&x| x > 1) {
            return Err(Error::Validation("indicators must be 0 or 1".into()));
        }
        Ok(Self {
            delta,
            trials,
            neurons,
            bins,
            data,
            clamp_count: 0,
            tail_duration: 0.0,
            tail_spikes: 0,
        })
    }

    pub fn zeros(delta: f64, trials: usize, neurons: usize, bins: usize) -> Self {
        Self {
            delta,
            trials,
            neurons,
            bins,
            data: vec![0; trials * neurons * bins],
            clamp_count: 0,
            tail_duration: 0.0,
            tail_spikes: 0,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Same-bin duplicates collapsed to a single 1.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    /// Length of `[M delta, T)` discarded when `T` is not a multiple of delta.
    pub fn tail_duration(&self) -> f64 {
        self.tail_duration
    }

    /// Spikes that fell into the discarded tail.
    pub fn tail_spikes(&self) -> usize {
        self.tail_spikes
    }

    pub fn bin_center(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.delta
    }

    #[inline]
    pub fn get(&self, trial: usize, neuron: usize, bin: usize) -> u8 {
        self.data[(trial * self.neurons + neuron) * self.bins + bin]
    }

    #[inline]
    pub fn set(&mut self, trial: usize, neuron: usize, bin: usize, value: bool) {
        let idx = (trial * self.neurons + neuron) * self.bins + bin;
        self.data[idx] = value as u8;
    }

    pub fn row(&self, trial: usize, neuron: usize) -> &[u8] {
        let start = (trial * self.neurons + neuron) * self.bins;
        &self.data[start..start + self.bins]
    }

    pub fn row_mut(&mut self, trial: usize, neuron: usize) -> &mut [u8] {
        let start = (trial * self.neurons + neuron) * self.bins;
        &mut self.data[start..start + self.bins]
    }

    pub fn ones(&self) -> usize {
        self.data.iter().map(|&x| x as usize).sum()
    }

    /// Per-bin number of trials on which `neuron` fired.
    pub fn column_counts(&self, neuron: usize) -> Vec<u32> {
        let mut counts = vec![0u32; self.bins];
        for r in 0..self.trials {
            for (c, &x) in counts.iter_mut().zip(self.row(r, neuron)) {
                *c += x as u32;
            }
        }
        counts
    }

    /// Logical OR within consecutive groups of `factor` bins; a trailing
    /// partial group is dropped.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Argument("coarsening factor must be positive".into()));
        }
        let bins = self.bins / factor;
        let mut out = Self::zeros(self.delta * factor as f64, self.trials, self.neurons, bins);
        for r in 0..self.trials {
            for i in 0..self.neurons {
                let src = self.row(r, i);
                for (m, dst) in out.row_mut(r, i).iter_mut().enumerate() {
                    *dst = src[m * factor..(m + 1) * factor].contains(&1) as u8;
                }
            }
        }
        Ok(out)
    }

    pub fn select_trials(&self, trials: &[usize]) -> Self {
        let stride = self.neurons * self.bins;
        let mut data = Vec::with_capacity(trials.len() * stride);
        for &r in trials {
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        Self {
            delta: self.delta,
            trials: trials.len(),
            neurons: self.neurons,
            bins: self.bins,
            data,
            clamp_count: 0,
            tail_duration: self.tail_duration,
            tail_spikes: 0,
        }
    }

    /// Keeps the listed neurons, in the given order.
    pub fn select_neurons(&self, neurons: &[usize]) -> Self {
        let mut out = Self::zeros(self.delta, self.trials, neurons.len(), self.bins);
        for r in 0..self.trials {
            for (k, &i) in neurons.iter().enumerate() {
                out.row_mut(r, k).copy_from_slice(self.row(r, i));
            }
        }
        out.tail_duration = self.tail_duration;
        out
    }
}

/// `X^i(t_m) = 1` iff the train has a spike in `[m delta, (m+1) delta)`.
pub fn bin_trains(data: &ExperimentData, delta: f64) -> Result<BinnedTensor> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Argument(format!("bin width must be positive, got {delta}")));
    }
    if delta > data.duration() {
        return Err(Error::Argument(format!(
            "bin width {delta} exceeds duration {}",
            data.duration()
        )));
    }
    let bins = snapped_floor(data.duration(), delta) as usize;
    let mut out = BinnedTensor::zeros(delta, data.trial_count(), data.neuron_count(), bins);
    out.tail_duration = (data.duration() - bins as f64 * delta).max(0.0);
    if out.tail_duration < 1e-12 * data.duration() {
        out.tail_duration = 0.0;
    }
    for (r, trial) in data.trials().iter().enumerate() {
        for (i, train) in trial.iter().enumerate() {
            let row = out.row_mut(r, i);
            let mut clamped = 0;
            let mut tail = 0;
            for &t in train.times() {
                let m = bin_index(t, delta);
                if m >= bins {
                    tail += 1;
                } else if row[m] == 1 {
                    clamped += 1;
                } else {
                    row[m] = 1;
                }
            }
            out.clamp_count += clamped;
            out.tail_spikes += tail;
        }
    }
    Ok(out)
}
