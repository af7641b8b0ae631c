use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::intensity::{IntensityFit, RateGrid};
use crate::spikedata::{BinnedTensor, JointEventSet};

/// Observed-over-expected joint spike ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    /// Neurons, 1-based in serialized form.
    #[serde(with = "one_based")]
    pub subset: Vec<usize>,
    pub mode: Mode,
    /// Lag in seconds.
    pub lag: f64,
    pub lag_bins: usize,
    #[serde(rename = "N")]
    pub n_joint: usize,
    #[serde(rename = "expected")]
    pub expected_joint: f64,
    pub xi_hat: f64,
    /// `None` when `xi_hat` is 0.
    pub log_xi: Option<f64>,
}

impl XiEstimate {
    pub fn from_counts(
        subset: Vec<usize>,
        mode: Mode,
        lag_bins: usize,
        delta: f64,
        n_joint: usize,
        expected_joint: f64,
    ) -> Result<Self> {
        if !(expected_joint > 0.0) || !expected_joint.is_finite() {
            return Err(Error::DegenerateModel(format!(
                "expected joint count is {expected_joint}; the fitted intensities vanish"
            )));
        }
        let xi_hat = n_joint as f64 / expected_joint;
        Ok(Self {
            subset,
            mode,
            lag: lag_bins as f64 * delta,
            lag_bins,
            n_joint,
            expected_joint,
            xi_hat,
            log_xi: (n_joint > 0).then(|| xi_hat.ln()),
        })
    }

    /// The statistic the bootstrap works with: `log xi_hat`, or the raw ratio
    /// when the log is undefined.
    pub fn statistic(&self) -> f64 {
        self.log_xi.unwrap_or(self.xi_hat)
    }
}

pub(crate) mod one_based {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|i| i + 1))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.contains(&0) {
            return Err(serde::de::Error::custom("neuron labels are 1-based"));
        }
        Ok(v.into_iter().map(|i| i - 1).collect())
    }
}

pub(crate) fn check_mode(fit: &IntensityFit, mode: Mode) -> Result<()> {
    match (mode, fit.has_history()) {
        (Mode::Marginal, false) | (Mode::Conditional, true) => Ok(()),
        (Mode::Marginal, true) => Err(Error::Argument(format!(
            "marginal estimate requested but the fit for neuron {} has history terms",
            fit.neuron + 1
        ))),
        (Mode::Conditional, false) => Err(Error::Argument(format!(
            "conditional estimate needs a history fit for neuron {}",
            fit.neuron + 1
        ))),
    }
}

pub(crate) fn check_events(events: &JointEventSet, binned: &BinnedTensor) -> Result<()> {
    if events.source_bins() != binned.bins() || events.trials() != binned.trials() {
        return Err(Error::Argument(
            "joint events were extracted from a different tensor".into(),
        ));
    }
    Ok(())
}

/// `sum_r sum_m lambda1(r, m) lambda2(r, m + lag) delta^2` over bins where
/// `m + lag` stays inside the trial.
pub fn expected_pair(g1: &RateGrid, g2: &RateGrid, lag_bins: usize, delta: f64) -> f64 {
    let trials = g1.trials();
    let span = g1.bins().saturating_sub(lag_bins);
    if !g1.per_trial() && !g2.per_trial() {
        let (a, b) = (g1.trial(0), g2.trial(0));
        let one: f64 = (0..span).map(|m| a[m] * b[m + lag_bins]).sum();
        return trials as f64 * one * delta * delta;
    }
    let mut total = 0.0;
    for r in 0..trials {
        let (a, b) = (g1.trial(r), g2.trial(r));
        total += (0..span).map(|m| a[m] * b[m + lag_bins]).sum::<f64>();
    }
    total * delta * delta
}

/// Pairwise excess-synchrony factor, marginal or history-conditional, at the
/// lag recorded in `events`.
pub fn estimate_xi_pair(
    events: &JointEventSet,
    fit1: &IntensityFit,
    fit2: &IntensityFit,
    mode: Mode,
    binned: &BinnedTensor,
) -> Result<XiEstimate> {
    let subset = events.subset();
    if subset.len() != 2 {
        return Err(Error::Argument("pairwise estimate needs a two-neuron event set".into()));
    }
    if fit1.neuron != subset[0] || fit2.neuron != subset[1] {
        return Err(Error::Argument(format!(
            "fits are for neurons ({}, {}) but events for ({}, {})",
            fit1.neuron + 1,
            fit2.neuron + 1,
            subset[0] + 1,
            subset[1] + 1
        )));
    }
    check_mode(fit1, mode)?;
    check_mode(fit2, mode)?;
    check_events(events, binned)?;
    let (g1, g2) = (fit1.rates_on(binned)?, fit2.rates_on(binned)?);
    let expected = expected_pair(&g1, &g2, events.lag_bins(), binned.delta());
    XiEstimate::from_counts(
        subset.to_vec(),
        mode,
        events.lag_bins(),
        binned.delta(),
        events.count(),
        expected,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{build_marginal_design, fit_poisson_irls, IrlsOptions, SplineBasis};
    use crate::spikedata::extract_joint_events;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_arithmetic() {
        let mut b = BinnedTensor::zeros(0.001, 1, 2, 1000);
        b.set(0, 0, 10, true);
        b.set(0, 1, 10, true);
        let ev = extract_joint_events(&b, &[0, 1], 0, false).unwrap();
        let f1 = IntensityFit::constant(0, 10.0, 1.0, 0.001).unwrap();
        let f2 = IntensityFit::constant(1, 10.0, 1.0, 0.001).unwrap();
        let est = estimate_xi_pair(&ev, &f1, &f2, Mode::Marginal, &b).unwrap();
        assert!((est.expected_joint - 0.1).abs() < 1e-12);
        assert!((est.xi_hat - 10.0).abs() < 1e-9);
        assert_eq!(est.xi_hat * est.expected_joint, est.n_joint as f64);
    }

    #[test]
    fn zero_joint_events_flag_log() {
        let b = BinnedTensor::zeros(0.001, 1, 2, 1000);
        let ev = extract_joint_events(&b, &[0, 1], 0, false).unwrap();
        let f1 = IntensityFit::constant(0, 10.0, 1.0, 0.001).unwrap();
        let f2 = IntensityFit::constant(1, 10.0, 1.0, 0.001).unwrap();
        let est = estimate_xi_pair(&ev, &f1, &f2, Mode::Marginal, &b).unwrap();
        assert_eq!(est.xi_hat, 0.0);
        assert_eq!(est.log_xi, None);
        assert_eq!(est.statistic(), 0.0);
    }

    #[test]
    fn mode_mismatch_is_an_argument_error() {
        let b = BinnedTensor::zeros(0.001, 1, 2, 1000);
        let ev = extract_joint_events(&b, &[0, 1], 0, false).unwrap();
        let f1 = IntensityFit::constant(0, 10.0, 1.0, 0.001).unwrap();
        let f2 = IntensityFit::constant(1, 10.0, 1.0, 0.001).unwrap();
        assert!(matches!(
            estimate_xi_pair(&ev, &f1, &f2, Mode::Conditional, &b),
            Err(Error::Argument(_))
        ));
        assert!(estimate_xi_pair(&ev, &f2, &f1, Mode::Marginal, &b).is_err());
    }

    #[test]
    fn lag_sums_over_valid_bins_only() {
        let b = BinnedTensor::zeros(0.001, 2, 2, 1000);
        let ev = extract_joint_events(&b, &[0, 1], 100, false).unwrap();
        let f1 = IntensityFit::constant(0, 10.0, 1.0, 0.001).unwrap();
        let f2 = IntensityFit::constant(1, 20.0, 1.0, 0.001).unwrap();
        let est = estimate_xi_pair(&ev, &f1, &f2, Mode::Marginal, &b).unwrap();
        assert!((est.expected_joint - 2.0 * 900.0 * 200.0 * 1e-6).abs() < 1e-12);
        assert!((est.lag - 0.1).abs() < 1e-15);
    }

    #[test]
    fn scaling_intensities_divides_xi() {
        let mut b = BinnedTensor::zeros(0.005, 3, 2, 200);
        for m in (0..200).step_by(17) {
            b.set(1, 0, m, true);
            b.set(1, 1, m, true);
        }
        let ev = extract_joint_events(&b, &[0, 1], 0, false).unwrap();
        let f1 = IntensityFit::constant(0, 12.0, 1.0, 0.005).unwrap();
        let f2 = IntensityFit::constant(1, 30.0, 1.0, 0.005).unwrap();
        let base = estimate_xi_pair(&ev, &f1, &f2, Mode::Marginal, &b).unwrap();
        let c = 1.7;
        let scaled = estimate_xi_pair(&ev, &f1.scaled(c).unwrap(), &f2.scaled(c).unwrap(), Mode::Marginal, &b).unwrap();
        assert!((scaled.xi_hat * c * c - base.xi_hat).abs() < 1e-10 * base.xi_hat);
    }

    #[test]
    fn report_uses_external_labels() {
        let est = XiEstimate::from_counts(vec![0, 3], Mode::Conditional, 0, 0.005, 4, 2.0).unwrap();
        let json = serde_json::to_value(&est).unwrap();
        assert_eq!(json["subset"], serde_json::json!([1, 4]));
        assert_eq!(json["N"], 4);
        assert_eq!(json["mode"], "conditional");
        let back: XiEstimate = serde_json::from_value(json).unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn independent_pair_is_calibrated() {
        // inhomogeneous independent pair, 1000 trials at 5 ms
        let rate1 = |t: f64| 30.0 + 20.0 * (2.0 * std::f64::consts::PI * t).sin();
        let rate2 = |t: f64| 25.0 + 15.0 * (4.0 * t).cos();
        let mut inside = 0;
        let reps = 20;
        for seed in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b = BinnedTensor::zeros(0.005, 1000, 2, 200);
            for r in 0..1000 {
                for m in 0..200 {
                    let t = b.bin_center(m);
                    b.set(r, 0, m, rng.random::<f64>() < rate1(t) * 0.005);
                    b.set(r, 1, m, rng.random::<f64>() < rate2(t) * 0.005);
                }
            }
            let basis = SplineBasis::cubic(1.0, 0.1).unwrap();
            let f1 = fit_poisson_irls(&build_marginal_design(&b, 0, &basis).unwrap(), &IrlsOptions::default()).unwrap();
            let f2 = fit_poisson_irls(&build_marginal_design(&b, 1, &basis).unwrap(), &IrlsOptions::default()).unwrap();
            let ev = extract_joint_events(&b, &[0, 1], 0, false).unwrap();
            let est = estimate_xi_pair(&ev, &f1, &f2, Mode::Marginal, &b).unwrap();
            if (0.9..=1.1).contains(&est.xi_hat) {
                inside += 1;
            }
        }
        assert!(inside as f64 >= 0.95 * reps as f64, "{inside}/{reps}");
    }
}
