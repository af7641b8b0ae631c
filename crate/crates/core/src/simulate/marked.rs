use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::{Mark, MarkedProcessSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::spikedata::{ExperimentData, SpikeTrain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkedEvent {
    pub time: f64,
    /// Index into the sequence's mark list.
    pub mark: usize,
}

/// One realization of a marked process on `[0, duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedEventSequence {
    pub duration: f64,
    pub nu: usize,
    pub marks: Vec<Mark>,
    pub events: Vec<MarkedEvent>,
}

impl MarkedEventSequence {
    /// Every spike of neuron `i`, including the delayed partner of lagged marks.
    pub fn neuron_times(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.events {
            let mark = &self.marks[e.mark];
            if let Some(pos) = mark.neurons.iter().position(|&n| n == i) {
                let t = if pos == 1 { e.time + mark.lag } else { e.time };
                out.push(t);
            }
        }
        out.sort_by(|a, b| a.total_cmp(b));
        out
    }

    pub fn trains(&self) -> Result<Vec<SpikeTrain>> {
        (0..self.nu)
            .map(|i| SpikeTrain::new(self.neuron_times(i), self.duration))
            .collect()
    }

    pub fn mark_count(&self, mark: usize) -> usize {
        self.events.iter().filter(|e| e.mark == mark).count()
    }
}

/// Collects sequences as trials of one experiment.
pub fn sequences_to_experiment(seqs: &[MarkedEventSequence]) -> Result<ExperimentData> {
    let first = seqs.first().ok_or_else(|| Error::Argument("no sequences".into()))?;
    let trials = seqs.iter().map(|s| s.trains()).collect::<Result<Vec<_>>>()?;
    ExperimentData::new(first.duration, first.nu, trials)
}

/// Event-stream CSV with an extra `mark` column naming the mark each spike
/// belongs to (for example `1+2`). The spike loaders ignore the extra column.
pub fn write_marked_csv<W: Write>(seqs: &[MarkedEventSequence], mut out: W) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    writeln!(out, "trial,neuron,time,mark").map_err(io)?;
    for (r, s) in seqs.iter().enumerate() {
        let mut rows: Vec<(usize, f64, usize)> = Vec::new();
        for e in &s.events {
            let mark = &s.marks[e.mark];
            for (pos, &i) in mark.neurons.iter().enumerate() {
                let t = if pos == 1 { e.time + mark.lag } else { e.time };
                rows.push((i, t, e.mark));
            }
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (i, t, k) in rows {
            writeln!(out, "{},{},{},{}", r + 1, i + 1, t, s.marks[k].label()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn insert_sorted(v: &mut Vec<f64>, t: f64) {
    let pos = v.partition_point(|&e| e < t);
    v.insert(pos, t);
}

/// Ogata thinning against the constant bound `spec.dominating_rate()`.
/// Lagged marks schedule the partner spike immediately, so later proposals
/// see it as part of that neuron's history.
pub fn simulate_marked(spec: &MarkedProcessSpec, rng: &mut Rng) -> Result<MarkedEventSequence> {
    spec.validate()?;
    let bound = spec.dominating_rate();
    let marks = spec.marks();
    let mut seq = MarkedEventSequence {
        duration: spec.duration,
        nu: spec.nu,
        marks: marks.clone(),
        events: Vec::new(),
    };
    if bound == 0.0 {
        return Ok(seq);
    }
    let gap = Exp::new(bound).map_err(|e| Error::Simulation(e.to_string()))?;
    let mut known: Vec<Vec<f64>> = vec![Vec::new(); spec.nu];
    let mut lam = vec![0.0; marks.len()];
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= spec.duration {
            break;
        }
        spec.mark_intensities(t, &known, &mut lam);
        let total: f64 = lam.iter().sum();
        if total > bound * (1.0 + 1e-12) {
            return Err(Error::Simulation(format!(
                "intensity {total:.4} at t = {t:.6} exceeds the dominating rate {bound:.4}"
            )));
        }
        let u = rng.random::<f64>() * bound;
        if u >= total {
            continue;
        }
        let mut acc = 0.0;
        let mut chosen = marks.len() - 1;
        for (k, l) in lam.iter().enumerate() {
            acc += l;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let mark = &marks[chosen];
        for (pos, &i) in mark.neurons.iter().enumerate() {
            insert_sorted(&mut known[i], if pos == 1 { t + mark.lag } else { t });
        }
        seq.events.push(MarkedEvent { time: t, mark: chosen });
    }
    Ok(seq)
}

/// Independent realizations; trial `r` uses stream `r` of `seed`.
pub fn simulate_marked_trials(spec: &MarkedProcessSpec, trials: usize, seed: u64) -> Result<Vec<MarkedEventSequence>> {
    (0..trials)
        .into_par_iter()
        .map(|r| simulate_marked(spec, &mut rng::replicate(seed, r as u64)))
        .collect()
}
