//! Synthetic experiments with known ground truth.

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::simulate::{Curve, InteractionSpec, MarkedProcessSpec, NeuronSpec};
use crate::spikedata::{ExperimentData, SpikeTrain};

/// Event times on `[0, duration)` of a Poisson process with intensity `rate`.
pub fn inhomogeneous_poisson(rate: &Curve, duration: f64, rng: &mut Rng) -> Vec<f64> {
    let bound = rate.sup();
    let mut out = Vec::new();
    if !(bound > 0.0) {
        return out;
    }
    let gap = Exp::new(bound).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= duration {
            return out;
        }
        if rng.random::<f64>() * bound < rate.eval(t) {
            out.push(t);
        }
    }
}

/// Independent Poisson neurons; trial `r` uses stream `r` of `seed`.
pub fn independent_poisson(rates: &[Curve], duration: f64, trials: usize, seed: u64) -> Result<ExperimentData> {
    let data = (0..trials)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::replicate(seed, r as u64);
            rates
                .iter()
                .map(|c| SpikeTrain::new(inhomogeneous_poisson(c, duration, &mut g), duration))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ExperimentData::new(duration, rates.len(), data)
}

/// Two neurons with constant rate `rate`, refractory period `theta` and a
/// synchronous mark with factor `gamma`.
pub fn synchrony_pair_spec(rate: f64, gamma: f64, duration: f64, delta: f64, theta: f64) -> MarkedProcessSpec {
    MarkedProcessSpec {
        nu: 2,
        duration,
        delta,
        theta,
        neurons: vec![
            NeuronSpec {
                rate: Curve::Value(rate),
                kernel: None,
            };
            2
        ],
        interactions: vec![InteractionSpec {
            neurons: vec![1, 2],
            gamma: Curve::Value(gamma),
            lag: 0.0,
        }],
        lambda_max: None,
    }
}

/// Trials with randomly timed network up states. Every neuron fires faster
/// during an up state and the first two neurons also share extra
/// synchronous spikes there, so joint spikes track the population rather
/// than the time since trial onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpStateOptions {
    pub trials: usize,
    pub duration: f64,
    /// Neurons besides the tested pair.
    pub population: usize,
    pub down_rate: f64,
    pub up_rate: f64,
    /// Rate of shared pair spikes during up states.
    pub joint_rate: f64,
    /// Rate of up-state onsets, per second.
    pub onset_rate: f64,
    pub up_duration: f64,
}

impl Default for UpStateOptions {
    fn default() -> Self {
        Self {
            trials: 50,
            duration: 1.0,
            population: 4,
            down_rate: 5.0,
            up_rate: 40.0,
            joint_rate: 30.0,
            onset_rate: 1.5,
            up_duration: 0.15,
        }
    }
}

pub fn up_state_experiment(opts: &UpStateOptions, seed: u64) -> Result<ExperimentData> {
    let rates = [opts.down_rate, opts.up_rate, opts.joint_rate, opts.onset_rate];
    if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || opts.up_rate < opts.down_rate || !(opts.up_duration > 0.0)
    {
        return Err(Error::Argument(
            "up-state rates must be nonnegative with up >= down".into(),
        ));
    }
    let nu = opts.population + 2;
    let t_end = opts.duration;
    let data = (0..opts.trials)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::replicate(seed, r as u64);
            let onsets = inhomogeneous_poisson(&Curve::Value(opts.onset_rate), t_end, &mut g);
            let mut windows: Vec<(f64, f64)> = Vec::new();
            for &s in &onsets {
                let b = (s + opts.up_duration).min(t_end);
                match windows.last_mut() {
                    Some(w) if s <= w.1 => w.1 = w.1.max(b),
                    _ => windows.push((s, b)),
                }
            }
            let extra = |rate: f64, g: &mut Rng| -> Vec<f64> {
                windows
                    .iter()
                    .flat_map(|&(a, b)| {
                        inhomogeneous_poisson(&Curve::Value(rate), b - a, g)
                            .into_iter()
                            .map(move |t| a + t)
                    })
                    .collect()
            };
            let shared = extra(opts.joint_rate, &mut g);
            let mut trains = Vec::with_capacity(nu);
            for i in 0..nu {
                let mut times = inhomogeneous_poisson(&Curve::Value(opts.down_rate), t_end, &mut g);
                times.extend(extra(opts.up_rate - opts.down_rate, &mut g));
                if i < 2 {
                    times.extend(shared.iter().copied());
                }
                times.sort_by(|a, b| a.total_cmp(b));
                times.dedup();
                trains.push(SpikeTrain::new(times, t_end)?);
            }
            Ok(trains)
        })
        .collect::<Result<Vec<_>>>()?;
    ExperimentData::new(t_end, nu, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Shape;

    #[test]
    fn poisson_count_matches_integral() {
        let c = Curve::Shape(Shape::Sine {
            mean: 30.0,
            amplitude: 20.0,
            frequency: 2.0,
            phase: 0.0,
        });
        let data = independent_poisson(&[c], 1.0, 400, 3).unwrap();
        let mean = data.spike_count() as f64 / 400.0;
        assert!((mean - 30.0).abs() < 4.0 * (30.0f64 / 400.0).sqrt(), "{mean}");
    }

    #[test]
    fn up_states_raise_rates() {
        let opts = UpStateOptions::default();
        let data = up_state_experiment(&opts, 2).unwrap();
        assert_eq!(data.neuron_count(), 6);
        let per = data.spike_count() as f64 / (50.0 * 6.0);
        // down 5 sp/s, plus (40 - 5) over the expected up fraction, plus the
        // shared spikes for two neurons
        let frac = 1.0 - (-1.5f64 * 0.15).exp();
        let expected = 5.0 + 35.0 * frac + 30.0 * frac * 2.0 / 6.0;
        assert!((per - expected).abs() < 0.15 * expected, "{per} vs {expected}");
        assert_eq!(up_state_experiment(&opts, 2).unwrap(), data);
    }
}
