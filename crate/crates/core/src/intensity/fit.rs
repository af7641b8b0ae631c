use std::path::Path;

use serde::{Deserialize, Serialize};

use super::design::{spline_rows, DesignMatrix, HistoryCovariateSpec, HistoryCovariates};
use super::irls::{irls_poisson, IrlsOptions};
use super::SplineBasis;
use crate::error::{Error, Result};
use crate::spikedata::BinnedTensor;

/// Fitted log-linear intensity `log lambda(t) = s(t)' beta [+ b_own h_own + b_pop h_pop]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityFit {
    /// 0-based neuron index (reports add 1).
    pub neuron: usize,
    pub basis: SplineBasis,
    pub coefficients: Vec<f64>,
    pub history: Option<HistoryCovariateSpec>,
    pub delta: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub ridge: f64,
}

impl IntensityFit {
    /// A fit assembled from known coefficients rather than estimated.
    pub fn from_coefficients(
        neuron: usize,
        basis: SplineBasis,
        coefficients: Vec<f64>,
        history: Option<HistoryCovariateSpec>,
        delta: f64,
    ) -> Result<Self> {
        let fit = Self {
            neuron,
            basis,
            coefficients,
            history,
            delta,
            deviance: 0.0,
            iterations: 0,
            ridge: 0.0,
        };
        fit.validate()?;
        Ok(fit)
    }

    /// Homogeneous rate `rate` on `[0, duration)`.
    pub fn constant(neuron: usize, rate: f64, duration: f64, delta: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::Argument(format!("rate must be positive, got {rate}")));
        }
        Self::from_coefficients(
            neuron,
            SplineBasis::intercept_only(duration),
            vec![rate.ln()],
            None,
            delta,
        )
    }

    fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        let want = self.basis.column_count() + if self.history.is_some() { 2 } else { 0 };
        if self.coefficients.len() != want {
            return Err(Error::Validation(format!(
                "fit has {} coefficients, basis and history need {want}",
                self.coefficients.len()
            )));
        }
        if self.coefficients.iter().any(|b| !b.is_finite()) {
            return Err(Error::Validation("non-finite coefficient".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Validation("fit bin width must be positive".into()));
        }
        Ok(())
    }

    pub fn has_history(&self) -> bool {
        self.history.is_some()
    }

    pub fn duration(&self) -> f64 {
        self.basis.duration()
    }

    fn spline_coefficients(&self) -> &[f64] {
        &self.coefficients[..self.basis.column_count()]
    }

    /// `(b_own, b_pop)` when the fit carries history terms.
    pub fn history_coefficients(&self) -> Option<(f64, f64)> {
        self.history.as_ref().map(|_| {
            let p = self.basis.column_count();
            (self.coefficients[p], self.coefficients[p + 1])
        })
    }

    /// Spline part of the log-intensity at `t`.
    pub fn log_baseline(&self, t: f64) -> f64 {
        let mut row = vec![0.0; self.basis.column_count()];
        self.basis.design_row(t, &mut row);
        row.iter().zip(self.spline_coefficients()).map(|(a, b)| a * b).sum()
    }

    /// Spline part of the log-intensity at each of `bins` bin centers of width `delta`.
    pub fn log_baseline_grid(&self, delta: f64, bins: usize) -> Vec<f64> {
        let p = self.basis.column_count();
        let rows = spline_rows(&self.basis, delta, bins);
        let beta = self.spline_coefficients();
        (0..bins)
            .map(|m| rows[m * p..(m + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Log-intensity; `history` is `(own count, population count)`.
    pub fn log_eval(&self, t: f64, history: Option<(f64, f64)>) -> Result<f64> {
        let base = self.log_baseline(t);
        match (self.history_coefficients(), history) {
            (None, _) => Ok(base),
            (Some((a, b)), Some((own, pop))) => Ok(base + a * own + b * pop),
            (Some(_), None) => Err(Error::Argument(format!(
                "fit for neuron {} has history terms; supply history counts",
                self.neuron + 1
            ))),
        }
    }

    /// Intensity in events per second.
    pub fn eval(&self, t: f64, history: Option<(f64, f64)>) -> Result<f64> {
        Ok(self.log_eval(t, history)?.exp())
    }

    /// The same model with every intensity multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Argument("scale factor must be positive".into()));
        }
        let mut out = self.clone();
        out.coefficients[0] += c.ln();
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fit: Self = serde_json::from_str(text)?;
        fit.validate()?;
        Ok(fit)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fitted intensity (events/s) at every bin center of a tensor. Fits without
/// history give one row shared by all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct RateGrid {
    trials: usize,
    bins: usize,
    per_trial: bool,
    values: Vec<f64>,
}

impl RateGrid {
    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn per_trial(&self) -> bool {
        self.per_trial
    }

    #[inline]
    pub fn at(&self, trial: usize, bin: usize) -> f64 {
        if self.per_trial {
            self.values[trial * self.bins + bin]
        } else {
            self.values[bin]
        }
    }

    /// Rates for one trial.
    pub fn trial(&self, trial: usize) -> &[f64] {
        if self.per_trial {
            &self.values[trial * self.bins..(trial + 1) * self.bins]
        } else {
            &self.values
        }
    }
}

impl IntensityFit {
    /// Evaluates the fit on every bin of `binned`, using each trial's realized
    /// history when the fit has history terms.
    pub fn rates_on(&self, binned: &BinnedTensor) -> Result<RateGrid> {
        if self.neuron >= binned.neurons() {
            return Err(Error::Argument(format!(
                "fit is for neuron {} but the data have {} neurons",
                self.neuron + 1,
                binned.neurons()
            )));
        }
        let bins = binned.bins();
        let base = self.log_baseline_grid(binned.delta(), bins);
        let Some((a, b)) = self.history_coefficients() else {
            return Ok(RateGrid {
                trials: binned.trials(),
                bins,
                per_trial: false,
                values: base.into_iter().map(f64::exp).collect(),
            });
        };
        if (self.delta - binned.delta()).abs() > 1e-9 * self.delta {
            return Err(Error::Argument(format!(
                "history fit used bin width {} but data are binned at {}",
                self.delta,
                binned.delta()
            )));
        }
        let spec = self.history.as_ref().expect("history coefficients imply a spec");
        let cov = HistoryCovariates::compute(binned, self.neuron, spec)?;
        let mut values = Vec::with_capacity(binned.trials() * bins);
        for r in 0..binned.trials() {
            for (m, s) in base.iter().enumerate() {
                values.push((s + a * cov.own(r, m) + b * cov.population(r, m)).exp());
            }
        }
        Ok(RateGrid {
            trials: binned.trials(),
            bins,
            per_trial: true,
            values,
        })
    }
}

/// Maximum-likelihood fit of a Poisson design; the returned model evaluates
/// the intensity in events per second.
pub fn fit_poisson_irls(design: &DesignMatrix, opts: &IrlsOptions) -> Result<IntensityFit> {
    let out = irls_poisson(&design.x, design.cols, &design.response, &design.offset, opts)?;
    Ok(IntensityFit {
        neuron: design.neuron,
        basis: design.basis.clone(),
        coefficients: out.coefficients,
        history: design.history.clone(),
        delta: design.delta,
        deviance: out.deviance,
        iterations: out.iterations,
        ridge: opts.ridge,
    })
}

pub fn eval_intensity(fit: &IntensityFit, t: f64, history: Option<(f64, f64)>) -> Result<f64> {
    fit.eval(t, history)
}
