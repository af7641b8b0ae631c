use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::intensity::IntensityFit;
use crate::loglinear::{cells_from_probabilities, CellTable, Interaction, ZetaValue};
use crate::rng::{self, Rng};
use crate::spikedata::BinnedTensor;

fn draw_pattern(row: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // rounding left a sliver above the last cumulative sum
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Independent draws of every bin's pattern from a fixed table. Row `k` of
/// the result is the table's `k`-th neuron. Per-trial tables need
/// `trials` to match.
pub fn simulate_binary_null(cells: &CellTable, trials: usize, seed: u64) -> Result<BinnedTensor> {
    if let Some(r) = cells.trials() {
        if r != trials {
            return Err(Error::Argument(format!("table has {r} trials, asked for {trials}")));
        }
    }
    let (nu, bins) = (cells.nu(), cells.bins());
    let rows: Vec<Vec<u8>> = (0..trials)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::replicate(seed, r as u64);
            let src = if cells.trials().is_some() { r } else { 0 };
            let mut out = vec![0u8; nu * bins];
            for m in 0..bins {
                let s = draw_pattern(cells.row(src, m), &mut rng);
                for k in 0..nu {
                    out[k * bins + m] = (s >> k & 1) as u8;
                }
            }
            out
        })
        .collect();
    BinnedTensor::from_raw(cells.delta(), trials, nu, bins, rows.concat())
}

/// Read-only view of one trial's bins before the current one.
pub struct PastView<'a> {
    data: &'a [u8],
    bins: usize,
    bin: usize,
    prefix: &'a [Vec<u32>],
}

impl PastView<'_> {
    pub fn bin(&self) -> usize {
        self.bin
    }

    /// Spikes of `neuron` in the `window` bins before the current one.
    pub fn count(&self, neuron: usize, window: usize) -> u32 {
        let p = &self.prefix[neuron];
        p[self.bin] - p[self.bin.saturating_sub(window)]
    }

    /// Most recent earlier bin in which `neuron` fired.
    pub fn last_spike(&self, neuron: usize) -> Option<usize> {
        let row = &self.data[neuron * self.bins..neuron * self.bins + self.bin];
        row.iter().rposition(|&x| x == 1)
    }
}

/// Intensities (events/s) of the simulated neurons given the realized past.
pub trait HistoryIntensity: Sync {
    /// Rows of the data tensor that are simulated.
    fn neurons(&self) -> &[usize];
    /// Intensity of `self.neurons()[k]` in `past.bin()` of `trial`.
    fn intensity(&self, k: usize, trial: usize, past: &PastView) -> f64;
}

/// Fitted intensity models evaluated on the simulated history.
pub struct FittedIntensity {
    neurons: Vec<usize>,
    log_base: Vec<Vec<f64>>,
    history: Vec<Option<FittedHistory>>,
}

struct FittedHistory {
    own: f64,
    pop: f64,
    own_window: usize,
    pop_window: usize,
    members: Vec<usize>,
}

impl FittedIntensity {
    pub fn new(fits: &[IntensityFit], template: &BinnedTensor) -> Result<Self> {
        let delta = template.delta();
        let mut history = Vec::with_capacity(fits.len());
        for f in fits {
            if f.neuron >= template.neurons() {
                return Err(Error::Argument(format!("neuron {} out of range", f.neuron + 1)));
            }
            history.push(match (&f.history, f.history_coefficients()) {
                (Some(spec), Some((own, pop))) => {
                    if (f.delta - delta).abs() > 1e-9 * delta {
                        return Err(Error::Argument("history fit and data use different bin widths".into()));
                    }
                    let (own_window, pop_window) = spec.window_bins(delta)?;
                    Some(FittedHistory {
                        own,
                        pop,
                        own_window,
                        pop_window,
                        members: spec.population_members(f.neuron, template.neurons()),
                    })
                }
                _ => None,
            });
        }
        Ok(Self {
            neurons: fits.iter().map(|f| f.neuron).collect(),
            log_base: fits
                .iter()
                .map(|f| f.log_baseline_grid(delta, template.bins()))
                .collect(),
            history,
        })
    }
}

impl HistoryIntensity for FittedIntensity {
    fn neurons(&self) -> &[usize] {
        &self.neurons
    }

    fn intensity(&self, k: usize, _trial: usize, past: &PastView) -> f64 {
        let mut eta = self.log_base[k][past.bin()];
        if let Some(h) = &self.history[k] {
            let own = past.count(self.neurons[k], h.own_window) as f64;
            let pop: u32 = h.members.iter().map(|&j| past.count(j, h.pop_window)).sum();
            eta += h.own * own + h.pop * pop as f64;
        }
        eta.exp()
    }
}

/// Sequential draws for the history-dependent null: every bin's table is
/// rebuilt from the history realized so far. Neurons not simulated keep
/// their observed trains unless listed in `resimulate` with per-bin firing
/// probabilities.
pub fn simulate_binary_conditional<H: HistoryIntensity + ?Sized>(
    model: &H,
    zetas: &[Interaction],
    template: &BinnedTensor,
    resimulate: &[(usize, Vec<f64>)],
    seed: u64,
) -> Result<BinnedTensor> {
    let modeled = model.neurons().to_vec();
    let (nu, bins, delta) = (template.neurons(), template.bins(), template.delta());
    if modeled.is_empty() || modeled.len() > 16 || modeled.iter().any(|&i| i >= nu) {
        return Err(Error::Argument("simulated neurons out of range".into()));
    }
    for (i, p) in resimulate {
        if *i >= nu || modeled.contains(i) || p.len() != bins || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument(format!("bad resimulation entry for neuron {}", i + 1)));
        }
    }
    let by_mask = crate::loglinear::zeta_masks(&modeled, zetas, bins)?;
    let size = 1usize << modeled.len();
    let trials: Vec<Vec<u8>> = (0..template.trials())
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::replicate(seed, r as u64);
            let mut data: Vec<u8> = (0..nu).flat_map(|i| template.row(r, i).to_vec()).collect();
            for &i in &modeled {
                data[i * bins..(i + 1) * bins].fill(0);
            }
            let mut prefix = vec![vec![0u32; bins + 1]; nu];
            let mut p = vec![0.0; modeled.len()];
            let mut zeta = vec![1.0; size];
            for m in 0..bins {
                for (i, probs) in resimulate {
                    data[i * bins + m] = (rng.random::<f64>() < probs[m]) as u8;
                }
                {
                    let past = PastView {
                        data: &data,
                        bins,
                        bin: m,
                        prefix: &prefix,
                    };
                    for k in 0..modeled.len() {
                        p[k] = model.intensity(k, r, &past) * delta;
                    }
                }
                for (mask, z) in by_mask.iter().enumerate() {
                    zeta[mask] = z.as_ref().map_or(1.0, |z: &ZetaValue| z.at(m));
                }
                let cells = cells_from_probabilities(&p, &zeta).map_err(|e| match e {
                    Error::Resolution { value, .. } => Error::Resolution { bin: m, value },
                    Error::InfeasibleTable { pattern, value, .. } => Error::InfeasibleTable {
                        trial: Some(r),
                        bin: m,
                        pattern,
                        value,
                    },
                    other => other,
                })?;
                let s = draw_pattern(&cells, &mut rng);
                for (k, &i) in modeled.iter().enumerate() {
                    data[i * bins + m] = (s >> k & 1) as u8;
                }
                for i in 0..nu {
                    prefix[i][m + 1] = prefix[i][m] + data[i * bins + m] as u32;
                }
            }
            Ok(data)
        })
        .collect::<Result<_>>()?;
    BinnedTensor::from_raw(delta, template.trials(), nu, bins, trials.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::HistoryCovariateSpec;
    use crate::loglinear::Mode;

    struct Refractory {
        neurons: Vec<usize>,
        rate: f64,
        dead_bins: usize,
    }

    impl HistoryIntensity for Refractory {
        fn neurons(&self) -> &[usize] {
            &self.neurons
        }

        fn intensity(&self, k: usize, _trial: usize, past: &PastView) -> f64 {
            match past.last_spike(self.neurons[k]) {
                Some(b) if past.bin() - b <= self.dead_bins => 0.0,
                _ => self.rate,
            }
        }
    }

    #[test]
    fn table_draws_match_cells() {
        let fits: Vec<_> = (0..2)
            .map(|i| IntensityFit::constant(i, 40.0, 1.0, 0.005).unwrap())
            .collect();
        let b = BinnedTensor::zeros(0.005, 1, 2, 200);
        let table = crate::loglinear::build_cell_table(
            &fits,
            &[Interaction::constant(vec![0, 1], 3.0)],
            0.005,
            Mode::Marginal,
            &b,
        )
        .unwrap();
        let sim = simulate_binary_null(&table, 2000, 11).unwrap();
        let n = (2000 * 200) as f64;
        let joint = crate::spikedata::extract_joint_events(&sim, &[0, 1], 0, false)
            .unwrap()
            .count() as f64;
        let p11 = table.cell(0, 0, 3);
        assert!(
            (joint / n - p11).abs() < 4.0 * (p11 / n).sqrt(),
            "{} vs {p11}",
            joint / n
        );
        let first = sim.ones() as f64 / (2.0 * n);
        assert!((first - 0.2).abs() < 0.005);
        assert_eq!(simulate_binary_null(&table, 2000, 11).unwrap(), sim);
    }

    #[test]
    fn refractory_history_blocks_adjacent_bins() {
        let model = Refractory {
            neurons: vec![0, 1],
            rate: 150.0,
            dead_bins: 2,
        };
        let template = BinnedTensor::zeros(0.002, 50, 2, 500);
        let sim =
            simulate_binary_conditional(&model, &[Interaction::constant(vec![0, 1], 2.0)], &template, &[], 5).unwrap();
        assert!(sim.ones() > 1000);
        for r in 0..50 {
            for i in 0..2 {
                let row = sim.row(r, i);
                let on: Vec<usize> = (0..500).filter(|&m| row[m] == 1).collect();
                assert!(on.windows(2).all(|w| w[1] - w[0] > 2));
            }
        }
    }

    #[test]
    fn observed_population_is_kept() {
        let mut template = BinnedTensor::zeros(0.005, 4, 3, 100);
        for m in (0..100).step_by(7) {
            template.set(1, 2, m, true);
        }
        let spec = HistoryCovariateSpec::new(0.01, 0.02, vec![0, 1]).unwrap();
        let mut fit = IntensityFit::constant(0, 20.0, 0.5, 0.005).unwrap();
        fit.history = Some(spec);
        fit.coefficients.extend([-1.0, 0.5]);
        let model =
            FittedIntensity::new(&[fit, IntensityFit::constant(1, 20.0, 0.5, 0.005).unwrap()], &template).unwrap();
        let sim = simulate_binary_conditional(&model, &[], &template, &[], 3).unwrap();
        assert_eq!(sim.row(1, 2), template.row(1, 2));
        let re = simulate_binary_conditional(&model, &[], &template, &[(2, vec![0.0; 100])], 3).unwrap();
        assert_eq!(re.row(1, 2).iter().map(|&x| x as u32).sum::<u32>(), 0);
        assert_eq!(
            simulate_binary_conditional(&model, &[], &template, &[], 3).unwrap(),
            sim
        );
    }
}
