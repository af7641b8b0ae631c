use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::intensity::{fit_poisson_irls, spline_rows, DesignMatrix, IntensityFit, IrlsOptions, RowIndex, SplineBasis};
use crate::spikedata::JointEventSet;

/// Smoothed `zeta(t_m) = lambda12(t_m) / (lambda1(t_m) lambda2(t_m + lag))`
/// at every bin where the first neuron's time lies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaCurve {
    pub delta: f64,
    pub lag_bins: usize,
    /// `None` outside the domain where both marginal intensities are positive.
    pub values: Vec<Option<f64>>,
    /// Fitted joint intensity, events/s^2.
    pub joint: IntensityFit,
}

impl ZetaCurve {
    /// Values with undefined bins replaced by 1 (no interaction).
    pub fn filled(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.unwrap_or(1.0)).collect()
    }
}

/// Fits a smooth log-intensity to per-bin joint counts (offset `log(R delta^2)`)
/// and divides by the product of the marginal intensities.
pub fn estimate_zeta_timevarying(
    events: &JointEventSet,
    fit1: &IntensityFit,
    fit2: &IntensityFit,
    smoother: &SplineBasis,
) -> Result<ZetaCurve> {
    if events.subset().len() != 2 || events.exclusive() {
        return Err(Error::Argument("time-varying zeta needs a non-exclusive pair".into()));
    }
    super::check_mode(fit1, Mode::Marginal)?;
    super::check_mode(fit2, Mode::Marginal)?;
    let required = 2 * smoother.column_count();
    if events.count() < required {
        return Err(Error::InsufficientEvents {
            found: events.count(),
            required,
        });
    }
    let delta = events.delta();
    let lag = events.lag_bins();
    let span = events.source_bins() - lag;
    let trials = events.trials() as f64;
    let counts = events.counts_per_bin();
    let cols = smoother.column_count();
    let design = DesignMatrix {
        neuron: events.subset()[0],
        basis: smoother.clone(),
        history: None,
        delta,
        cols,
        x: spline_rows(smoother, delta, span),
        response: counts[..span].iter().map(|&c| c as f64).collect(),
        offset: vec![(trials * delta * delta).ln(); span],
        index: (0..span).map(|bin| RowIndex { trial: None, bin }).collect(),
    };
    let joint = fit_poisson_irls(&design, &IrlsOptions::default())?;
    let base1 = fit1.log_baseline_grid(delta, span + lag);
    let base2 = fit2.log_baseline_grid(delta, span + lag);
    let lj = joint.log_baseline_grid(delta, span);
    let values = (0..span)
        .map(|m| {
            let denom = (base1[m] + base2[m + lag]).exp();
            let v = (lj[m] - base1[m] - base2[m + lag]).exp();
            (denom > 0.0 && denom.is_finite() && v.is_finite()).then_some(v)
        })
        .collect();
    Ok(ZetaCurve {
        delta,
        lag_bins: lag,
        values,
        joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::build_marginal_design;
    use crate::spikedata::{extract_joint_events, BinnedTensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn independent(trials: usize, rate: f64, seed: u64) -> BinnedTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = BinnedTensor::zeros(0.005, trials, 2, 200);
        for r in 0..trials {
            for i in 0..2 {
                for m in 0..200 {
                    b.set(r, i, m, rng.random::<f64>() < rate * 0.005);
                }
            }
        }
        b
    }

    fn marginal_fits(b: &BinnedTensor) -> (IntensityFit, IntensityFit) {
        let basis = SplineBasis::cubic(1.0, 0.1).unwrap();
        let f = |i| fit_poisson_irls(&build_marginal_design(b, i, &basis).unwrap(), &IrlsOptions::default()).unwrap();
        (f(0), f(1))
    }

    #[test]
    fn independence_gives_unit_zeta() {
        let b = independent(2000, 50.0, 4);
        let (f1, f2) = marginal_fits(&b);
        let ev = extract_joint_events(&b, &[0, 1], 0, false).unwrap();
        let curve = estimate_zeta_timevarying(&ev, &f1, &f2, &SplineBasis::cubic(1.0, 0.1).unwrap()).unwrap();
        for v in &curve.values {
            let v = v.unwrap();
            assert!((0.7..=1.4).contains(&v), "{v}");
        }
        // sum of lambda1 lambda2 zeta delta^2 over trials and bins reproduces N
        let delta = 0.005;
        let implied: f64 = (0..200)
            .map(|m| {
                let t = b.bin_center(m);
                2000.0
                    * f1.eval(t, None).unwrap()
                    * f2.eval(t, None).unwrap()
                    * curve.values[m].unwrap()
                    * delta
                    * delta
            })
            .sum();
        let n = ev.count() as f64;
        assert!((implied - n).abs() / n < 0.05, "{implied} vs {n}");
    }

    #[test]
    fn sparse_events_are_rejected() {
        let b = independent(5, 5.0, 1);
        let f1 = IntensityFit::constant(0, 5.0, 1.0, 0.005).unwrap();
        let f2 = IntensityFit::constant(1, 5.0, 1.0, 0.005).unwrap();
        let ev = extract_joint_events(&b, &[0, 1], 0, false).unwrap();
        let r = estimate_zeta_timevarying(&ev, &f1, &f2, &SplineBasis::cubic(1.0, 0.1).unwrap());
        assert!(
            matches!(r, Err(Error::InsufficientEvents { required: 26, .. })),
            "{r:?}"
        );
    }
}
