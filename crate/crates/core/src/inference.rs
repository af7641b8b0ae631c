//! Parametric-bootstrap tests of `xi = 1` (pairs) and of no three-way
//! interaction (triples).

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::intensity::{build_conditional_design, build_marginal_design, fit_poisson_irls, IntensityFit, IrlsOptions};
use crate::loglinear::{
    build_cell_table, estimate_xi_123, estimate_xi_pair, ipf_fit_triple, one_based, triple_count_tables, IpfOptions,
    Mode, TripleModel, XiEstimate,
};
use crate::rng;
use crate::simulate::{simulate_binary_conditional, simulate_binary_null, FittedIntensity};
use crate::spikedata::{extract_joint_events, BinnedTensor};

/// Below this many replicates the reported p-values are flagged.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Hypothesis {
    PairMarginal,
    PairConditional,
    PairLagged { lag_bins: usize },
    Triple,
}

impl Hypothesis {
    pub fn mode(&self) -> Mode {
        match self {
            Hypothesis::PairConditional => Mode::Conditional,
            _ => Mode::Marginal,
        }
    }

    pub fn lag_bins(&self) -> usize {
        match self {
            Hypothesis::PairLagged { lag_bins } => *lag_bins,
            _ => 0,
        }
    }

    fn arity(&self) -> usize {
        match self {
            Hypothesis::Triple => 3,
            _ => 2,
        }
    }
}

fn default_replicates() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub hypothesis: Hypothesis,
    #[serde(with = "one_based")]
    pub subset: Vec<usize>,
    #[serde(rename = "B", default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    /// Conditional test: redraw the other neurons from their per-bin firing
    /// frequencies instead of keeping the observed trains.
    #[serde(default)]
    pub resimulate_population: bool,
    /// Re-estimate the intensities on every replicate.
    #[serde(default)]
    pub refit: bool,
}

impl TestSpec {
    pub fn new(hypothesis: Hypothesis, subset: Vec<usize>, seed: u64) -> Self {
        Self {
            hypothesis,
            subset,
            replicates: default_replicates(),
            alpha: default_alpha(),
            seed,
            resimulate_population: false,
            refit: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.subset.len() != self.hypothesis.arity() {
            return Err(Error::Argument(format!(
                "{:?} needs {} neurons, got {}",
                self.hypothesis,
                self.hypothesis.arity(),
                self.subset.len()
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Argument("need at least one bootstrap replicate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Argument("alpha must lie in (0, 1)".into()));
        }
        if self.resimulate_population && self.hypothesis != Hypothesis::PairConditional {
            return Err(Error::Argument(
                "population resimulation applies to the conditional test".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    #[serde(rename = "B")]
    pub replicates: usize,
    /// `log xi_hat` per replicate; `None` where the replicate had no joint event.
    pub statistics: Vec<Option<f64>>,
    /// Standard deviation of the defined replicate statistics.
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p_normal: Option<f64>,
    pub p_empirical: f64,
    /// Set when the observed count is zero and the test falls back to the
    /// lower tail of the raw ratio.
    pub one_sided: bool,
    pub seed: u64,
    pub undefined_count: usize,
    pub warnings: Vec<String>,
}

impl BootstrapResult {
    pub fn reject(&self, alpha: f64) -> bool {
        self.p_normal.unwrap_or(self.p_empirical) < alpha
    }
}

/// `z = observed / se`, the two-sided normal p-value, and the empirical
/// p-value with the `+1` correction. Undefined replicates count as at least
/// as extreme as anything observed. With `observed = None` (no observed
/// joint event) only the lower-tail empirical p-value is defined.
pub fn z_and_p(observed: Option<f64>, boot: &BootstrapResult) -> (Option<f64>, Option<f64>, f64) {
    let b = boot.statistics.len() as f64;
    let Some(obs) = observed else {
        return (None, None, (1.0 + boot.undefined_count as f64) / (b + 1.0));
    };
    let extreme = boot
        .statistics
        .iter()
        .filter(|s| s.is_none_or(|v| v.abs() >= obs.abs()))
        .count() as f64;
    let p_emp = (1.0 + extreme) / (b + 1.0);
    match boot.se {
        Some(se) if se > 0.0 => {
            let z = obs / se;
            (Some(z), Some(erfc(z.abs() / std::f64::consts::SQRT_2)), p_emp)
        }
        _ => (None, None, p_emp),
    }
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn fits_for(fits: &[IntensityFit], subset: &[usize]) -> Result<Vec<IntensityFit>> {
    subset
        .iter()
        .map(|&i| {
            fits.iter()
                .find(|f| f.neuron == i)
                .cloned()
                .ok_or_else(|| Error::Argument(format!("no fit for neuron {}", i + 1)))
        })
        .collect()
}

fn refit(fit: &IntensityFit, data: &BinnedTensor, neuron: usize) -> Result<IntensityFit> {
    let design = match &fit.history {
        Some(h) => build_conditional_design(data, neuron, &fit.basis, h)?,
        None => build_marginal_design(data, neuron, &fit.basis)?,
    };
    fit_poisson_irls(
        &design,
        &IrlsOptions {
            ridge: fit.ridge,
            ..IrlsOptions::default()
        },
    )
}

/// The observed statistic for `spec` on `binned`.
pub fn observed_estimate(
    binned: &BinnedTensor,
    fits: &[IntensityFit],
    spec: &TestSpec,
) -> Result<(XiEstimate, Option<TripleModel>)> {
    spec.validate()?;
    let chosen = fits_for(fits, &spec.subset)?;
    match spec.hypothesis {
        Hypothesis::Triple => {
            let neurons = [spec.subset[0], spec.subset[1], spec.subset[2]];
            let tables = triple_count_tables(binned, neurons)?;
            let model = ipf_fit_triple(&tables, chosen, binned, &IpfOptions::default())?;
            let events = extract_joint_events(binned, &spec.subset, 0, false)?;
            Ok((estimate_xi_123(&events, &model, Mode::Marginal, binned)?, Some(model)))
        }
        h => {
            let events = extract_joint_events(binned, &spec.subset, h.lag_bins(), false)?;
            Ok((
                estimate_xi_pair(&events, &chosen[0], &chosen[1], h.mode(), binned)?,
                None,
            ))
        }
    }
}

/// Simulates `spec.replicates` experiments under the null model built from
/// `fits` and recomputes the statistic on each with the same intensities
/// (or refitted ones when `spec.refit`). Replicate `b` uses stream `b` of
/// `spec.seed`, so results do not depend on scheduling.
pub fn bootstrap_test(
    binned: &BinnedTensor,
    fits: &[IntensityFit],
    observed: &XiEstimate,
    spec: &TestSpec,
) -> Result<BootstrapResult> {
    spec.validate()?;
    if observed.subset != spec.subset
        || observed.lag_bins != spec.hypothesis.lag_bins()
        || observed.mode != spec.hypothesis.mode()
    {
        return Err(Error::Argument("observed estimate does not match the test".into()));
    }
    let chosen = fits_for(fits, &spec.subset)?;
    let b = spec.replicates;
    let statistics: Vec<Option<f64>> = match (spec.hypothesis, spec.refit) {
        (Hypothesis::PairConditional, _) => conditional_replicates(binned, &chosen, spec)?,
        (h, false) => {
            let q = joint_probabilities(binned, &chosen, h, &spec.subset)?;
            let trials = binned.trials() as u64;
            let expected = observed.expected_joint;
            (0..b)
                .into_par_iter()
                .map(|k| {
                    let mut g = rng::replicate(spec.seed, k as u64);
                    let mut n = 0u64;
                    for &p in &q {
                        if p > 0.0 {
                            n += Binomial::new(trials, p.min(1.0))
                                .expect("valid binomial")
                                .sample(&mut g);
                        }
                    }
                    (n > 0).then(|| (n as f64 / expected).ln())
                })
                .collect()
        }
        (h, true) => marginal_refit_replicates(binned, &chosen, h, spec)?,
    };
    let undefined_count = statistics.iter().filter(|s| s.is_none()).count();
    if undefined_count == b {
        return Err(Error::DegenerateTest("no replicate produced a joint event".into()));
    }
    let defined: Vec<f64> = statistics.iter().flatten().copied().collect();
    let mut boot = BootstrapResult {
        replicates: b,
        statistics,
        se: sample_sd(&defined),
        z: None,
        p_normal: None,
        p_empirical: 1.0,
        one_sided: observed.log_xi.is_none(),
        seed: spec.seed,
        undefined_count,
        warnings: Vec::new(),
    };
    let (z, p_normal, p_empirical) = z_and_p(observed.log_xi, &boot);
    boot.z = z;
    boot.p_normal = p_normal;
    boot.p_empirical = p_empirical;
    if b < MIN_REPLICATES {
        boot.warnings.push(format!("only {b} replicates; p-values are coarse"));
    }
    if undefined_count as f64 > 0.05 * b as f64 {
        boot.warnings
            .push(format!("{undefined_count} of {b} replicates had no joint event"));
    }
    if boot.se.is_none_or(|s| s == 0.0) {
        boot.warnings.push("replicate spread is zero; z is undefined".into());
    }
    Ok(boot)
}

/// Per-bin probability of the tested joint pattern under the marginal null.
fn joint_probabilities(
    binned: &BinnedTensor,
    fits: &[IntensityFit],
    h: Hypothesis,
    subset: &[usize],
) -> Result<Vec<f64>> {
    let delta = binned.delta();
    match h {
        Hypothesis::Triple => {
            let (_, model) = observed_estimate(binned, fits, &TestSpec::new(h, subset.to_vec(), 0))?;
            let model = model.expect("triple model");
            let table = build_cell_table(&model.fits, &model.interactions(), delta, Mode::Marginal, binned)?;
            Ok((0..binned.bins()).map(|m| table.cell(0, m, 0b111)).collect())
        }
        _ => {
            let lag = h.lag_bins();
            let table = build_cell_table(fits, &[], delta, Mode::Marginal, binned)?;
            let span = binned.bins() - lag;
            Ok((0..span)
                .map(|m| {
                    (1.0 - table.cell(0, m, 0b00) - table.cell(0, m, 0b10))
                        * (table.cell(0, m + lag, 0b10) + table.cell(0, m + lag, 0b11))
                })
                .collect())
        }
    }
}

fn marginal_refit_replicates(
    binned: &BinnedTensor,
    fits: &[IntensityFit],
    h: Hypothesis,
    spec: &TestSpec,
) -> Result<Vec<Option<f64>>> {
    let delta = binned.delta();
    let table = match h {
        Hypothesis::Triple => {
            let (_, model) = observed_estimate(binned, fits, spec)?;
            let model = model.expect("triple model");
            build_cell_table(&model.fits, &model.interactions(), delta, Mode::Marginal, binned)?
        }
        _ => build_cell_table(fits, &[], delta, Mode::Marginal, binned)?,
    };
    let positions: Vec<usize> = (0..fits.len()).collect();
    (0..spec.replicates)
        .into_par_iter()
        .map(|k| {
            let sim = simulate_binary_null(&table, binned.trials(), rng::derive(spec.seed, k as u64))?;
            let refits = fits
                .iter()
                .enumerate()
                .map(|(p, f)| refit(f, &sim, p))
                .collect::<Result<Vec<_>>>()?;
            let est = match h {
                Hypothesis::Triple => {
                    let tables = triple_count_tables(&sim, [0, 1, 2])?;
                    let model = ipf_fit_triple(&tables, refits, &sim, &IpfOptions::default())?;
                    estimate_xi_123(
                        &extract_joint_events(&sim, &positions, 0, false)?,
                        &model,
                        Mode::Marginal,
                        &sim,
                    )?
                }
                _ => {
                    let ev = extract_joint_events(&sim, &positions, h.lag_bins(), false)?;
                    estimate_xi_pair(&ev, &refits[0], &refits[1], Mode::Marginal, &sim)?
                }
            };
            Ok(est.log_xi)
        })
        .collect()
}

fn conditional_replicates(binned: &BinnedTensor, fits: &[IntensityFit], spec: &TestSpec) -> Result<Vec<Option<f64>>> {
    let model = FittedIntensity::new(fits, binned)?;
    let resimulate: Vec<(usize, Vec<f64>)> = if spec.resimulate_population {
        let r = binned.trials() as f64;
        (0..binned.neurons())
            .filter(|i| !spec.subset.contains(i))
            .map(|i| (i, binned.column_counts(i).into_iter().map(|c| c as f64 / r).collect()))
            .collect()
    } else {
        Vec::new()
    };
    (0..spec.replicates)
        .into_par_iter()
        .map(|k| {
            let sim = simulate_binary_conditional(&model, &[], binned, &resimulate, rng::derive(spec.seed, k as u64))?;
            let (f1, f2) = if spec.refit {
                (
                    refit(&fits[0], &sim, fits[0].neuron)?,
                    refit(&fits[1], &sim, fits[1].neuron)?,
                )
            } else {
                (fits[0].clone(), fits[1].clone())
            };
            let ev = extract_joint_events(&sim, &spec.subset, 0, false)?;
            match estimate_xi_pair(&ev, &f1, &f2, Mode::Conditional, &sim) {
                Ok(est) => Ok(est.log_xi),
                Err(Error::DegenerateModel(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Observed estimate plus bootstrap, as one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    #[serde(flatten)]
    pub estimate: XiEstimate,
    #[serde(flatten)]
    pub bootstrap: BootstrapResult,
    pub alpha: f64,
    pub reject: bool,
    /// Pairwise factors of the fitted no-three-way model (triple test).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pairwise_zeta: Option<[f64; 3]>,
}

pub fn run_test(binned: &BinnedTensor, fits: &[IntensityFit], spec: &TestSpec) -> Result<TestReport> {
    let (estimate, model) = observed_estimate(binned, fits, spec)?;
    let bootstrap = bootstrap_test(binned, fits, &estimate, spec)?;
    Ok(TestReport {
        reject: bootstrap.reject(spec.alpha),
        alpha: spec.alpha,
        pairwise_zeta: model.map(|m| [m.pairwise[0].at(0), m.pairwise[1].at(0), m.pairwise[2].at(0)]),
        estimate,
        bootstrap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{HistoryCovariateSpec, SplineBasis};
    use crate::loglinear::Interaction;
    use proptest::prelude::*;

    fn boot_with(stats: Vec<Option<f64>>, se: Option<f64>) -> BootstrapResult {
        BootstrapResult {
            replicates: stats.len(),
            undefined_count: stats.iter().filter(|s| s.is_none()).count(),
            statistics: stats,
            se,
            z: None,
            p_normal: None,
            p_empirical: 1.0,
            one_sided: false,
            seed: 0,
            warnings: vec![],
        }
    }

    #[test]
    fn z_and_p_examples() {
        let boot = boot_with(vec![Some(0.1), Some(-0.2), None, Some(0.5)], Some(0.3));
        let (z, p, e) = z_and_p(Some(0.0), &boot);
        assert_eq!(z, Some(0.0));
        assert!((p.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(e, 1.0);
        let (_, p, _) = z_and_p(Some(1.96 * 0.3), &boot);
        assert!((p.unwrap() - 0.05).abs() < 1e-3);
        // only the undefined replicate beats 0.55
        let (_, _, e) = z_and_p(Some(0.55), &boot);
        assert!((e - 2.0 / 5.0).abs() < 1e-15);
        let (z, p, e) = z_and_p(Some(0.55), &boot_with(vec![Some(0.1); 3], Some(0.0)));
        assert!(z.is_none() && p.is_none());
        assert_eq!(e, 0.25);
        let (z, _, e) = z_and_p(None, &boot);
        assert!(z.is_none());
        assert_eq!(e, 2.0 / 5.0);
    }

    proptest! {
        #[test]
        fn empirical_p_is_bounded_and_monotone(stats in prop::collection::vec(prop::option::weighted(0.9, -3.0f64..3.0), 1..60), a in 0.0f64..4.0, d in 0.0f64..2.0) {
            let boot = boot_with(stats, Some(1.0));
            let b = boot.statistics.len() as f64;
            let (_, _, p1) = z_and_p(Some(a), &boot);
            let (_, _, p2) = z_and_p(Some(-(a + d)), &boot);
            prop_assert!(p1 >= 1.0 / (b + 1.0) && p1 <= 1.0);
            prop_assert!(p2 <= p1);
        }
    }

    fn independent_pair(seed: u64) -> (BinnedTensor, Vec<IntensityFit>) {
        let fits: Vec<_> = (0..2)
            .map(|i| IntensityFit::constant(i, 30.0, 1.0, 0.005).unwrap())
            .collect();
        let template = BinnedTensor::zeros(0.005, 1, 2, 200);
        let table = build_cell_table(&fits, &[], 0.005, Mode::Marginal, &template).unwrap();
        let data = simulate_binary_null(&table, 100, seed).unwrap();
        let basis = SplineBasis::intercept_only(1.0);
        let fitted = (0..2)
            .map(|i| {
                refit(
                    &IntensityFit {
                        basis: basis.clone(),
                        ..fits[i].clone()
                    },
                    &data,
                    i,
                )
                .unwrap()
            })
            .collect();
        (data, fitted)
    }

    #[test]
    fn fast_path_is_deterministic_and_centered() {
        let (data, fits) = independent_pair(1);
        let mut spec = TestSpec::new(Hypothesis::PairMarginal, vec![0, 1], 42);
        spec.replicates = 400;
        let a = run_test(&data, &fits, &spec).unwrap();
        let b = run_test(&data, &fits, &spec).unwrap();
        assert_eq!(a, b);
        let defined: Vec<f64> = a.bootstrap.statistics.iter().flatten().copied().collect();
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        let se = a.bootstrap.se.unwrap();
        // log of a Poisson-like ratio is biased by about -se^2 / 2
        assert!(
            (mean + se * se / 2.0).abs() < 3.0 * se / (defined.len() as f64).sqrt(),
            "{mean} {se}"
        );
        let json = serde_json::to_value(&a).unwrap();
        for key in [
            "N",
            "expected",
            "xi_hat",
            "log_xi",
            "se",
            "z",
            "p_normal",
            "p_empirical",
            "B",
            "seed",
            "subset",
            "mode",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn fast_path_matches_full_simulation_spread() {
        let (data, fits) = independent_pair(2);
        let mut spec = TestSpec::new(Hypothesis::PairMarginal, vec![0, 1], 7);
        spec.replicates = 300;
        let fast = run_test(&data, &fits, &spec).unwrap().bootstrap.se.unwrap();
        spec.refit = true;
        let full = run_test(&data, &fits, &spec).unwrap().bootstrap.se.unwrap();
        assert!((fast / full - 1.0).abs() < 0.25, "{fast} vs {full}");
    }

    #[test]
    fn injected_synchrony_is_detected() {
        let fits: Vec<_> = (0..2)
            .map(|i| IntensityFit::constant(i, 30.0, 1.0, 0.005).unwrap())
            .collect();
        let template = BinnedTensor::zeros(0.005, 1, 2, 200);
        let table = build_cell_table(
            &fits,
            &[Interaction::constant(vec![0, 1], 3.0)],
            0.005,
            Mode::Marginal,
            &template,
        )
        .unwrap();
        let data = simulate_binary_null(&table, 100, 5).unwrap();
        let mut spec = TestSpec::new(Hypothesis::PairMarginal, vec![0, 1], 3);
        spec.replicates = 200;
        let report = run_test(&data, &fits, &spec).unwrap();
        assert!(report.reject);
        assert!(report.estimate.xi_hat > 2.0);
        assert!(report.bootstrap.p_empirical < 0.01);
    }

    #[test]
    fn conditional_and_triple_paths_run() {
        let mut data = independent_pair(3).0;
        let h = HistoryCovariateSpec::new(0.02, 0.02, vec![0, 1]).unwrap();
        let basis = SplineBasis::intercept_only(1.0);
        let fits: Vec<_> = (0..2)
            .map(|i| {
                let f = IntensityFit::from_coefficients(
                    i,
                    basis.clone(),
                    vec![30f64.ln(), -0.5, 0.0],
                    Some(h.clone()),
                    0.005,
                )
                .unwrap();
                refit(&f, &data, i).unwrap()
            })
            .collect();
        let mut spec = TestSpec::new(Hypothesis::PairConditional, vec![0, 1], 9);
        spec.replicates = 30;
        let a = run_test(&data, &fits, &spec).unwrap();
        assert_eq!(a, run_test(&data, &fits, &spec).unwrap());
        assert!(a.bootstrap.warnings.iter().any(|w| w.contains("coarse")));

        // three neurons for the triple test
        let third = independent_pair(4).0;
        let mut raw = Vec::new();
        for r in 0..data.trials() {
            for i in 0..2 {
                raw.extend_from_slice(data.row(r, i));
            }
            raw.extend_from_slice(third.row(r, 0));
        }
        data = BinnedTensor::from_raw(0.005, data.trials(), 3, data.bins(), raw).unwrap();
        let fits: Vec<_> = (0..3)
            .map(|i| IntensityFit::constant(i, 30.0, 1.0, 0.005).unwrap())
            .collect();
        let mut spec = TestSpec::new(Hypothesis::Triple, vec![0, 1, 2], 9);
        spec.replicates = 50;
        let t = run_test(&data, &fits, &spec).unwrap();
        assert!(t.pairwise_zeta.is_some());
        assert_eq!(t.bootstrap.statistics.len(), 50);
        assert!(TestSpec::new(Hypothesis::Triple, vec![0, 1], 1).validate().is_err());
    }
}
