use serde::{Deserialize, Serialize};

use super::SplineBasis;
use crate::error::{Error, Result};
use crate::spikedata::BinnedTensor;

/// Trailing-window spike counts used as history covariates.
///
/// `own_window` counts the modeled neuron's own spikes; `population_window`
/// counts spikes of every other neuron not listed in `exclude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryCovariateSpec {
    pub own_window: f64,
    pub population_window: f64,
    /// 0-based neuron indices left out of the population count.
    pub exclude: Vec<usize>,
}

impl HistoryCovariateSpec {
    pub fn new(own_window: f64, population_window: f64, exclude: Vec<usize>) -> Result<Self> {
        if !(own_window > 0.0) || !(population_window > 0.0) {
            return Err(Error::Argument("history windows must be positive".into()));
        }
        Ok(Self {
            own_window,
            population_window,
            exclude,
        })
    }

    /// Window lengths in whole bins at resolution `delta`.
    pub fn window_bins(&self, delta: f64) -> Result<(usize, usize)> {
        Ok((
            whole_bins(self.own_window, delta)?,
            whole_bins(self.population_window, delta)?,
        ))
    }

    pub fn population_members(&self, neuron: usize, neurons: usize) -> Vec<usize> {
        (0..neurons)
            .filter(|&j| j != neuron && !self.exclude.contains(&j))
            .collect()
    }
}

fn whole_bins(window: f64, delta: f64) -> Result<usize> {
    if window < delta * (1.0 - 1e-9) {
        return Err(Error::Argument(format!(
            "history window {window} s is shorter than one bin ({delta} s)"
        )));
    }
    let q = window / delta;
    if (q - q.round()).abs() > 1e-6 * q.max(1.0) {
        return Err(Error::Argument(format!(
            "history window {window} s is not a whole number of {delta} s bins"
        )));
    }
    Ok(q.round() as usize)
}

/// Per-(trial, bin) covariate values for one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryCovariates {
    bins: usize,
    own: Vec<f64>,
    population: Vec<f64>,
}

impl HistoryCovariates {
    pub fn compute(binned: &BinnedTensor, neuron: usize, spec: &HistoryCovariateSpec) -> Result<Self> {
        if neuron >= binned.neurons() {
            return Err(Error::Argument(format!("neuron {} out of range", neuron + 1)));
        }
        let (own_w, pop_w) = spec.window_bins(binned.delta())?;
        let members = spec.population_members(neuron, binned.neurons());
        let (trials, bins) = (binned.trials(), binned.bins());
        let mut own = vec![0.0; trials * bins];
        let mut population = vec![0.0; trials * bins];
        let mut pop_row = vec![0u32; bins];
        for r in 0..trials {
            trailing_sums(binned.row(r, neuron), own_w, &mut own[r * bins..(r + 1) * bins]);
            pop_row.iter_mut().for_each(|c| *c = 0);
            for &j in &members {
                for (c, &x) in pop_row.iter_mut().zip(binned.row(r, j)) {
                    *c += x as u32;
                }
            }
            trailing_sums(&pop_row, pop_w, &mut population[r * bins..(r + 1) * bins]);
        }
        Ok(Self { bins, own, population })
    }

    #[inline]
    pub fn own(&self, trial: usize, bin: usize) -> f64 {
        self.own[trial * self.bins + bin]
    }

    #[inline]
    pub fn population(&self, trial: usize, bin: usize) -> f64 {
        self.population[trial * self.bins + bin]
    }

    pub fn population_row(&self, trial: usize) -> &[f64] {
        &self.population[trial * self.bins..(trial + 1) * self.bins]
    }
}

/// `out[m] = sum of x[m - window .. m]` (the strict past).
fn trailing_sums<T: Copy + Into<f64>>(x: &[T], window: usize, out: &mut [f64]) {
    let mut acc = 0.0;
    for m in 0..x.len() {
        out[m] = acc;
        acc += x[m].into();
        if m + 1 > window {
            acc -= x[m + 1 - window - 1].into();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIndex {
    pub trial: Option<usize>,
    pub bin: usize,
}

/// Poisson regression problem: row-major covariates, response, log-exposure
/// offset.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub(crate) neuron: usize,
    pub(crate) basis: SplineBasis,
    pub(crate) history: Option<HistoryCovariateSpec>,
    pub(crate) delta: f64,
    pub(crate) cols: usize,
    pub(crate) x: Vec<f64>,
    pub(crate) response: Vec<f64>,
    pub(crate) offset: Vec<f64>,
    pub(crate) index: Vec<RowIndex>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.response.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.x[k * self.cols..(k + 1) * self.cols]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn index(&self) -> &[RowIndex] {
        &self.index
    }

    pub fn neuron(&self) -> usize {
        self.neuron
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn history(&self) -> Option<&HistoryCovariateSpec> {
        self.history.as_ref()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Covariate column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|k| self.x[k * self.cols + j]).collect()
    }
}

fn check_basis(binned: &BinnedTensor, neuron: usize, basis: &SplineBasis) -> Result<()> {
    if neuron >= binned.neurons() {
        return Err(Error::Argument(format!(
            "neuron {} out of range (have {})",
            neuron + 1,
            binned.neurons()
        )));
    }
    if binned.trials() == 0 || binned.bins() == 0 {
        return Err(Error::Argument("empty tensor".into()));
    }
    let covered = binned.bins() as f64 * binned.delta();
    if basis.duration() < covered * (1.0 - 1e-9) {
        return Err(Error::Argument(format!(
            "spline covers {} s but data span {covered} s",
            basis.duration()
        )));
    }
    Ok(())
}

/// Spline rows evaluated at every bin center, shared by the design builders.
pub(crate) fn spline_rows(basis: &SplineBasis, delta: f64, bins: usize) -> Vec<f64> {
    let p = basis.column_count();
    let mut rows = vec![0.0; bins * p];
    for m in 0..bins {
        basis.design_row((m as f64 + 0.5) * delta, &mut rows[m * p..(m + 1) * p]);
    }
    rows
}

/// One row per bin; the response is the number of trials with a spike there,
/// the exposure `R delta`.
pub fn build_marginal_design(binned: &BinnedTensor, neuron: usize, basis: &SplineBasis) -> Result<DesignMatrix> {
    check_basis(binned, neuron, basis)?;
    let bins = binned.bins();
    let offset = (binned.trials() as f64 * binned.delta()).ln();
    Ok(DesignMatrix {
        neuron,
        basis: basis.clone(),
        history: None,
        delta: binned.delta(),
        cols: basis.column_count(),
        x: spline_rows(basis, binned.delta(), bins),
        response: binned.column_counts(neuron).into_iter().map(f64::from).collect(),
        offset: vec![offset; bins],
        index: (0..bins).map(|bin| RowIndex { trial: None, bin }).collect(),
    })
}

/// One row per (trial, bin) with the binary response, spline columns and the
/// two trailing-count covariates; exposure `delta`.
pub fn build_conditional_design(
    binned: &BinnedTensor,
    neuron: usize,
    basis: &SplineBasis,
    hist: &HistoryCovariateSpec,
) -> Result<DesignMatrix> {
    check_basis(binned, neuron, basis)?;
    let covariates = HistoryCovariates::compute(binned, neuron, hist)?;
    let (trials, bins) = (binned.trials(), binned.bins());
    let p = basis.column_count();
    let cols = p + 2;
    let spline = spline_rows(basis, binned.delta(), bins);
    let n = trials * bins;
    let mut x = Vec::with_capacity(n * cols);
    let mut response = Vec::with_capacity(n);
    let mut index = Vec::with_capacity(n);
    for r in 0..trials {
        let row = binned.row(r, neuron);
        for m in 0..bins {
            x.extend_from_slice(&spline[m * p..(m + 1) * p]);
            x.push(covariates.own(r, m));
            x.push(covariates.population(r, m));
            response.push(row[m] as f64);
            index.push(RowIndex { trial: Some(r), bin: m });
        }
    }
    Ok(DesignMatrix {
        neuron,
        basis: basis.clone(),
        history: Some(hist.clone()),
        delta: binned.delta(),
        cols,
        x,
        response,
        offset: vec![binned.delta().ln(); n],
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(trials: &[&[&[u8]]]) -> BinnedTensor {
        let neurons = trials[0].len();
        let bins = trials[0][0].len();
        let data = trials
            .iter()
            .flat_map(|t| t.iter().flat_map(|r| r.iter().copied()))
            .collect();
        BinnedTensor::from_raw(0.005, trials.len(), neurons, bins, data).unwrap()
    }

    #[test]
    fn marginal_response_is_column_sum() {
        let b = tensor(&[&[&[1, 0]], &[&[1, 1]]]);
        let d = build_marginal_design(&b, 0, &SplineBasis::intercept_only(0.01)).unwrap();
        assert_eq!(d.response(), &[2.0, 1.0]);
        assert!((d.offset()[0] - (2.0 * 0.005f64).ln()).abs() < 1e-15);
        let z = tensor(&[&[&[0, 0]]]);
        let d = build_marginal_design(&z, 0, &SplineBasis::intercept_only(0.01)).unwrap();
        assert!(d.response().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn own_history_counts_trailing_window() {
        let b = tensor(&[&[&[1, 1, 0, 0], &[0, 0, 1, 0]]]);
        let spec = HistoryCovariateSpec::new(0.010, 0.005, vec![]).unwrap();
        let d = build_conditional_design(&b, 0, &SplineBasis::intercept_only(0.02), &spec).unwrap();
        let own = d.column(1);
        let pop = d.column(2);
        assert_eq!(own, vec![0.0, 1.0, 2.0, 1.0]);
        assert_eq!(pop, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.offset()[0], 0.005f64.ln());
    }

    #[test]
    fn window_validation() {
        let b = tensor(&[&[&[1, 0]]]);
        let short = HistoryCovariateSpec::new(0.001, 0.005, vec![]).unwrap();
        assert!(matches!(
            build_conditional_design(&b, 0, &SplineBasis::intercept_only(0.01), &short),
            Err(Error::Argument(_))
        ));
        let fractional = HistoryCovariateSpec::new(0.0075, 0.005, vec![]).unwrap();
        assert!(build_conditional_design(&b, 0, &SplineBasis::intercept_only(0.01), &fractional).is_err());
    }

    proptest! {
        #[test]
        fn covariates_match_brute_force(
            data in prop::collection::vec(0u8..2, 2 * 4 * 25),
            own_w in 1usize..8,
            pop_w in 1usize..8,
        ) {
            let b = BinnedTensor::from_raw(0.005, 2, 4, 25, data).unwrap();
            let spec = HistoryCovariateSpec::new(own_w as f64 * 0.005, pop_w as f64 * 0.005, vec![1]).unwrap();
            let d = build_conditional_design(&b, 0, &SplineBasis::cubic(0.125, 0.05).unwrap(), &spec).unwrap();
            let p = d.basis().column_count();
            for (k, idx) in d.index().iter().enumerate() {
                let (r, m) = (idx.trial.unwrap(), idx.bin);
                let own: u32 = (m.saturating_sub(own_w)..m).map(|j| b.get(r, 0, j) as u32).sum();
                let pop: u32 = (m.saturating_sub(pop_w)..m)
                    .map(|j| (b.get(r, 2, j) + b.get(r, 3, j)) as u32)
                    .sum();
                prop_assert_eq!(d.row(k)[p], own as f64);
                prop_assert_eq!(d.row(k)[p + 1], pop as f64);
                prop_assert_eq!(d.response()[k], b.get(r, 0, m) as f64);
            }
        }

        #[test]
        fn marginal_response_matches_loop(data in prop::collection::vec(0u8..2, 5 * 2 * 12)) {
            let b = BinnedTensor::from_raw(0.01, 5, 2, 12, data).unwrap();
            let d = build_marginal_design(&b, 1, &SplineBasis::cubic(0.12, 0.05).unwrap()).unwrap();
            for m in 0..12 {
                let brute: u32 = (0..5).map(|r| b.get(r, 1, m) as u32).sum();
                prop_assert_eq!(d.response()[m], brute as f64);
            }
        }
    }
}
