use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loglinear::Mode;

/// Settings as they may appear in a TOML file or on the command line; unset
/// fields fall through to the next source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub delta: Option<f64>,
    pub knot_spacing: Option<f64>,
    pub own_window: Option<f64>,
    pub population_window: Option<f64>,
    pub exclude: Option<Vec<usize>>,
    pub ridge: Option<f64>,
    pub mode: Option<Mode>,
    pub neurons: Option<Vec<usize>>,
    pub lag: Option<f64>,
    pub bootstrap: Option<usize>,
    pub alpha: Option<f64>,
    pub resimulate_population: Option<bool>,
    pub refit: Option<bool>,
    pub folds: Option<usize>,
    pub target_fpr: Option<f64>,
    pub reps: Option<usize>,
    pub deltas: Option<Vec<f64>>,
    pub history_window: Option<f64>,
}

impl Overrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win over `base`.
    pub fn over(self, base: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: self.$f.or(base.$f)),* } };
        }
        pick!(
            input,
            spec,
            output_dir,
            seed,
            delta,
            knot_spacing,
            own_window,
            population_window,
            exclude,
            ridge,
            mode,
            neurons,
            lag,
            bootstrap,
            alpha,
            resimulate_population,
            refit,
            folds,
            target_fpr,
            reps,
            deltas,
            history_window
        )
    }
}

/// Fully resolved settings, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub delta: f64,
    pub knot_spacing: f64,
    pub own_window: f64,
    pub population_window: f64,
    /// 1-based neurons left out of every population covariate.
    pub exclude: Vec<usize>,
    pub ridge: f64,
    pub mode: Mode,
    /// 1-based neurons under test.
    pub neurons: Vec<usize>,
    pub lag: f64,
    pub bootstrap: usize,
    pub alpha: f64,
    pub resimulate_population: bool,
    pub refit: bool,
    pub folds: usize,
    pub target_fpr: f64,
    pub reps: usize,
    pub deltas: Vec<f64>,
    pub history_window: Option<f64>,
}

impl RunConfig {
    pub fn resolve(o: Overrides) -> Result<Self> {
        let seed = o
            .seed
            .ok_or_else(|| Error::Config("a seed is required (--seed or `seed` in the config file)".into()))?;
        let cfg = RunConfig {
            input: o.input,
            spec: o.spec,
            output_dir: o.output_dir.unwrap_or_else(|| PathBuf::from(".")),
            seed,
            delta: o.delta.unwrap_or(0.005),
            knot_spacing: o.knot_spacing.unwrap_or(0.1),
            own_window: o.own_window.unwrap_or(0.1),
            population_window: o.population_window.unwrap_or(0.1),
            exclude: o.exclude.unwrap_or_default(),
            ridge: o.ridge.unwrap_or(0.0),
            mode: o.mode.unwrap_or(Mode::Marginal),
            neurons: o.neurons.unwrap_or_else(|| vec![1, 2]),
            lag: o.lag.unwrap_or(0.0),
            bootstrap: o.bootstrap.unwrap_or(1000),
            alpha: o.alpha.unwrap_or(0.05),
            resimulate_population: o.resimulate_population.unwrap_or(false),
            refit: o.refit.unwrap_or(false),
            folds: o.folds.unwrap_or(10),
            target_fpr: o.target_fpr.unwrap_or(0.1),
            reps: o.reps.unwrap_or(200),
            deltas: o.deltas.unwrap_or_else(|| vec![0.008, 0.004, 0.002, 0.001]),
            history_window: o.history_window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("delta", self.delta),
            ("knot_spacing", self.knot_spacing),
            ("own_window", self.own_window),
            ("population_window", self.population_window),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.delta >= self.knot_spacing {
            return Err(Error::Config(format!(
                "delta ({}) must be smaller than the knot spacing ({})",
                self.delta, self.knot_spacing
            )));
        }
        if !(self.ridge >= 0.0) || !(self.lag >= 0.0) {
            return Err(Error::Config("ridge and lag must be nonnegative".into()));
        }
        if self.neurons.contains(&0) || self.exclude.contains(&0) {
            return Err(Error::Config("neuron labels are 1-based".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(0.0..=1.0).contains(&self.target_fpr) {
            return Err(Error::Config(
                "alpha must lie in (0, 1) and target_fpr in [0, 1]".into(),
            ));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0)) || self.history_window.is_some_and(|w| !(w > 0.0)) {
            return Err(Error::Config("bin widths and windows must be positive".into()));
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("an input file is required (--input or `input`)".into()))
    }

    pub fn spec(&self) -> Result<&Path> {
        self.spec
            .as_deref()
            .ok_or_else(|| Error::Config("a process spec is required (--spec or `spec`)".into()))
    }

    /// 0-based neurons under test.
    pub fn tested(&self) -> Vec<usize> {
        self.neurons.iter().map(|i| i - 1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_file_defaults() {
        let file: Overrides =
            toml::from_str("seed = 3\ndelta = 0.002\nbootstrap = 50\nmode = \"conditional\"").unwrap();
        let flags = Overrides {
            delta: Some(0.001),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(flags.over(file)).unwrap();
        assert_eq!(cfg.delta, 0.001);
        assert_eq!(cfg.bootstrap, 50);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.mode, Mode::Conditional);
        assert_eq!(cfg.knot_spacing, 0.1);
        assert_eq!(cfg.folds, 10);
    }

    #[test]
    fn bad_configs() {
        assert!(RunConfig::resolve(Overrides::default()).is_err());
        let o = Overrides {
            seed: Some(1),
            delta: Some(0.2),
            ..Default::default()
        };
        assert!(RunConfig::resolve(o).is_err());
        assert!(toml::from_str::<Overrides>("sede = 1").is_err());
    }
}
