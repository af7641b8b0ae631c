use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonnegative function of time, given as a number or a named smooth shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Curve {
    Value(f64),
    Shape(Shape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `mean + amplitude sin(2 pi frequency t + phase)`
    Sine {
        mean: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `base + peak exp(-(t - center)^2 / (2 width^2))`
    Bump {
        base: f64,
        peak: f64,
        center: f64,
        width: f64,
    },
    /// Linear interpolation through `(times, values)`, flat outside.
    Piecewise { times: Vec<f64>, values: Vec<f64> },
}

impl Curve {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Value(v) => *v,
            Curve::Shape(Shape::Sine {
                mean,
                amplitude,
                frequency,
                phase,
            }) => mean + amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin(),
            Curve::Shape(Shape::Bump {
                base,
                peak,
                center,
                width,
            }) => base + peak * (-(t - center).powi(2) / (2.0 * width * width)).exp(),
            Curve::Shape(Shape::Piecewise { times, values }) => {
                let k = times.partition_point(|&x| x <= t);
                if k == 0 {
                    values[0]
                } else if k == times.len() {
                    values[k - 1]
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    values[k - 1] + w * (values[k] - values[k - 1])
                }
            }
        }
    }

    /// Least upper bound over all `t`.
    pub fn sup(&self) -> f64 {
        match self {
            Curve::Value(v) => *v,
            Curve::Shape(Shape::Sine { mean, amplitude, .. }) => mean + amplitude.abs(),
            Curve::Shape(Shape::Bump { base, peak, .. }) => base + peak.max(0.0),
            Curve::Shape(Shape::Piecewise { values, .. }) => values.iter().copied().fold(f64::MIN, f64::max),
        }
    }

    fn inf(&self) -> f64 {
        match self {
            Curve::Value(v) => *v,
            Curve::Shape(Shape::Sine { mean, amplitude, .. }) => mean - amplitude.abs(),
            Curve::Shape(Shape::Bump { base, peak, .. }) => base + peak.min(0.0),
            Curve::Shape(Shape::Piecewise { values, .. }) => values.iter().copied().fold(f64::MAX, f64::min),
        }
    }

    /// Points where the curve is not smooth.
    pub(crate) fn kinks(&self) -> &[f64] {
        match self {
            Curve::Shape(Shape::Piecewise { times, .. }) => times,
            _ => &[],
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if let Curve::Shape(Shape::Piecewise { times, values }) = self {
            if times.is_empty() || times.len() != values.len() || times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(format!(
                    "{what}: piecewise curve needs matching, strictly increasing times"
                )));
            }
        }
        if let Curve::Shape(Shape::Bump { width, .. }) = self {
            if !(*width > 0.0) {
                return Err(Error::Config(format!("{what}: bump width must be positive")));
            }
        }
        let (lo, hi) = (self.inf(), self.sup());
        if !(lo >= 0.0) || !hi.is_finite() {
            return Err(Error::Config(format!(
                "{what} must be finite and nonnegative (range {lo}..{hi})"
            )));
        }
        Ok(())
    }
}

/// Multiplicative self-excitation (`weight > 0`) or suppression: the
/// intensity is scaled by `exp(weight * sum_s exp(-(t - s) / tau))` over the
/// neuron's past events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryKernel {
    pub weight: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSpec {
    /// Baseline intensity, events/s.
    pub rate: Curve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<HistoryKernel>,
}

/// A shared mark. With a positive `lag` the mark is a pair whose second
/// neuron fires `lag` seconds after the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    /// 1-based neuron labels.
    pub neurons: Vec<usize>,
    pub gamma: Curve,
    #[serde(default)]
    pub lag: f64,
}

/// One mark of the process: the neurons (0-based) that fire together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub neurons: Vec<usize>,
    #[serde(default)]
    pub lag: f64,
}

impl Mark {
    pub fn label(&self) -> String {
        let names: Vec<String> = self.neurons.iter().map(|i| (i + 1).to_string()).collect();
        names.join("+")
    }
}

/// Marked point process whose `k`-neuron marks have intensity
/// `delta^(k-1) gamma(t) prod_i lambda_i(t | own history)`; a neuron cannot
/// fire within `theta` of its own events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedProcessSpec {
    pub nu: usize,
    pub duration: f64,
    pub delta: f64,
    pub theta: f64,
    pub neurons: Vec<NeuronSpec>,
    #[serde(default)]
    pub interactions: Vec<InteractionSpec>,
    /// Dominating total intensity; computed from the curve bounds if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
}

/// Kernel terms older than this many time constants are dropped.
const KERNEL_HORIZON: f64 = 40.0;

impl MarkedProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 || self.neurons.len() != self.nu {
            return Err(Error::Config(format!(
                "spec declares nu = {} but lists {} neurons",
                self.nu,
                self.neurons.len()
            )));
        }
        for (name, v) in [
            ("duration", self.duration),
            ("delta", self.delta),
            ("theta", self.theta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (i, n) in self.neurons.iter().enumerate() {
            n.rate.validate(&format!("rate of neuron {}", i + 1))?;
            if let Some(k) = n.kernel {
                if !(k.tau > 0.0) || !k.weight.is_finite() {
                    return Err(Error::Config(format!("kernel of neuron {} needs tau > 0", i + 1)));
                }
            }
        }
        let mut seen: Vec<(Vec<usize>, u64)> = Vec::new();
        for x in &self.interactions {
            let what = format!("interaction {:?}", x.neurons);
            if x.neurons.len() < 2 || x.neurons.iter().any(|&i| i == 0 || i > self.nu) {
                return Err(Error::Config(format!(
                    "{what} needs two or more labels in 1..={}",
                    self.nu
                )));
            }
            let mut sorted = x.neurons.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != x.neurons.len() {
                return Err(Error::Config(format!("{what} repeats a neuron")));
            }
            if !(x.lag >= 0.0) || (x.lag > 0.0 && x.neurons.len() != 2) {
                return Err(Error::Config(format!(
                    "{what}: lags are nonnegative and for pairs only"
                )));
            }
            if x.lag > 0.0 && x.lag <= self.theta {
                return Err(Error::Config(format!("{what}: lag must exceed the refractory period")));
            }
            x.gamma.validate(&format!("gamma of {what}"))?;
            let key = if x.lag > 0.0 { x.neurons.clone() } else { sorted };
            if seen.iter().any(|(k, l)| *k == key && *l == x.lag.to_bits()) {
                return Err(Error::Config(format!("{what} listed twice")));
            }
            seen.push((key, x.lag.to_bits()));
        }
        if let Some(l) = self.lambda_max {
            if !(l > 0.0) {
                return Err(Error::Config("lambda_max must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads JSON or TOML by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    /// The same family member at another bin width.
    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }

    /// Singletons first, then one mark per interaction in listed order.
    pub fn marks(&self) -> Vec<Mark> {
        let mut out: Vec<Mark> = (0..self.nu)
            .map(|i| Mark {
                neurons: vec![i],
                lag: 0.0,
            })
            .collect();
        out.extend(self.interactions.iter().map(|x| Mark {
            neurons: x.neurons.iter().map(|i| i - 1).collect(),
            lag: x.lag,
        }));
        out
    }

    /// Largest value the history kernel factor of neuron `i` can take.
    fn kernel_bound(&self, i: usize) -> f64 {
        match self.neurons[i].kernel {
            Some(k) if k.weight > 0.0 => (k.weight / ((self.theta / k.tau).exp() - 1.0)).exp(),
            _ => 1.0,
        }
    }

    fn neuron_bound(&self, i: usize) -> f64 {
        self.neurons[i].rate.sup() * self.kernel_bound(i)
    }

    /// Upper bound on the total intensity over all marks.
    pub fn dominating_rate(&self) -> f64 {
        if let Some(l) = self.lambda_max {
            return l;
        }
        let mut total: f64 = (0..self.nu).map(|i| self.neuron_bound(i)).sum();
        for x in &self.interactions {
            let k = x.neurons.len() as i32;
            let prod: f64 = x.neurons.iter().map(|&i| self.neuron_bound(i - 1)).product();
            total += self.delta.powi(k - 1) * x.gamma.sup() * prod;
        }
        total
    }

    /// `lambda_i(t | H)` where `known` holds every event time of neuron `i`
    /// determined so far (sorted, possibly including scheduled future ones).
    /// Zero within `theta` of any known event and outside `[0, T)`.
    pub fn neuron_intensity(&self, i: usize, t: f64, known: &[f64]) -> f64 {
        if !(0.0..self.duration).contains(&t) {
            return 0.0;
        }
        let pos = known.partition_point(|&e| e < t);
        if pos > 0 && t - known[pos - 1] <= self.theta {
            return 0.0;
        }
        if pos < known.len() && known[pos] - t <= self.theta {
            return 0.0;
        }
        let spec = &self.neurons[i];
        let mut rate = spec.rate.eval(t);
        if let Some(k) = spec.kernel {
            let mut sum = 0.0;
            for &e in known[..pos].iter().rev() {
                let age = t - e;
                if age > KERNEL_HORIZON * k.tau {
                    break;
                }
                sum += (-age / k.tau).exp();
            }
            rate *= (k.weight * sum).exp();
        }
        rate
    }

    /// Intensity of every mark at `t`, written into `out` (one entry per mark).
    pub(crate) fn mark_intensities(&self, t: f64, known: &[Vec<f64>], out: &mut [f64]) {
        let mut single = vec![0.0; self.nu];
        for i in 0..self.nu {
            single[i] = self.neuron_intensity(i, t, &known[i]);
            out[i] = single[i];
        }
        for (k, x) in self.interactions.iter().enumerate() {
            let g = x.gamma.eval(t);
            out[self.nu + k] = if g == 0.0 {
                0.0
            } else if x.lag > 0.0 {
                let (a, b) = (x.neurons[0] - 1, x.neurons[1] - 1);
                self.delta * g * single[a] * self.neuron_intensity(b, t + x.lag, &known[b])
            } else {
                let prod: f64 = x.neurons.iter().map(|&i| single[i - 1]).product();
                self.delta.powi(x.neurons.len() as i32 - 1) * g * prod
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> MarkedProcessSpec {
        MarkedProcessSpec {
            nu: 2,
            duration: 1.0,
            delta: 0.001,
            theta: 0.002,
            neurons: vec![
                NeuronSpec {
                    rate: Curve::Value(10.0),
                    kernel: None,
                },
                NeuronSpec {
                    rate: Curve::Shape(Shape::Sine {
                        mean: 20.0,
                        amplitude: 5.0,
                        frequency: 1.0,
                        phase: 0.0,
                    }),
                    kernel: Some(HistoryKernel { weight: 0.5, tau: 0.01 }),
                },
            ],
            interactions: vec![InteractionSpec {
                neurons: vec![1, 2],
                gamma: Curve::Value(2.0),
                lag: 0.0,
            }],
            lambda_max: None,
        }
    }

    #[test]
    fn toml_and_json_agree() {
        let text = r#"
            nu = 2
            duration = 1.0
            delta = 0.001
            theta = 0.002
            [[neurons]]
            rate = 10
            [[neurons]]
            rate = { kind = "sine", mean = 20, amplitude = 5, frequency = 1 }
            kernel = { weight = 0.5, tau = 0.01 }
            [[interactions]]
            neurons = [1, 2]
            gamma = 2
        "#;
        let spec = MarkedProcessSpec::from_toml(text).unwrap();
        assert_eq!(spec, pair());
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(MarkedProcessSpec::from_json(&json).unwrap(), spec);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = pair();
        s.interactions[0].neurons = vec![1, 3];
        assert!(s.validate().is_err());
        let mut s = pair();
        s.neurons[0].rate = Curve::Shape(Shape::Sine {
            mean: 1.0,
            amplitude: 2.0,
            frequency: 1.0,
            phase: 0.0,
        });
        assert!(s.validate().is_err());
        let mut s = pair();
        s.interactions[0].gamma = Curve::Value(-0.5);
        assert!(s.validate().is_err());
        let mut s = pair();
        s.interactions[0].lag = 0.001;
        assert!(s.validate().is_err());
    }

    #[test]
    fn refractory_and_kernel() {
        let s = pair();
        assert_eq!(s.neuron_intensity(0, 0.5, &[0.499]), 0.0);
        assert_eq!(s.neuron_intensity(0, 0.5, &[0.501]), 0.0);
        assert_eq!(s.neuron_intensity(0, 0.5, &[0.4]), 10.0);
        let with = s.neuron_intensity(1, 0.5, &[0.49]);
        let base = s.neurons[1].rate.eval(0.5);
        assert!((with - base * (0.5 * (-1.0f64).exp()).exp()).abs() < 1e-12);
        assert_eq!(s.neuron_intensity(0, 1.0, &[]), 0.0);
    }

    #[test]
    fn dominating_rate_bounds_the_kernel() {
        let s = pair();
        let kb = (0.5 / ((0.2f64).exp() - 1.0)).exp();
        let expected = 10.0 + 25.0 * kb + 0.001 * 2.0 * 10.0 * 25.0 * kb;
        assert!((s.dominating_rate() - expected).abs() < 1e-9);
        // densest admissible history: events every theta
        let known: Vec<f64> = (1..200).map(|k| 0.5 - k as f64 * 0.002 - 1e-12).rev().collect();
        assert!(s.neuron_intensity(1, 0.5, &known) <= 25.0 * kb);
    }

    #[test]
    fn piecewise_curve_interpolates() {
        let c = Curve::Shape(Shape::Piecewise {
            times: vec![0.0, 1.0],
            values: vec![10.0, 20.0],
        });
        assert_eq!(c.eval(0.25), 12.5);
        assert_eq!(c.eval(-1.0), 10.0);
        assert_eq!(c.eval(3.0), 20.0);
        assert_eq!(c.sup(), 20.0);
    }
}
