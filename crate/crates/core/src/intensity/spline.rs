use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic B-splines on uniformly spaced breakpoints over `[0, T]`, with the
/// boundary knots repeated `degree + 1` times.
///
/// Regression columns are an intercept followed by every B-spline except the
/// first; the dropped function is absorbed by the intercept because the full
/// basis sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    duration: f64,
    spacing: Option<f64>,
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn cubic(duration: f64, spacing: f64) -> Result<Self> {
        Self::with_degree(duration, spacing, 3)
    }

    pub fn with_degree(duration: f64, spacing: f64, degree: usize) -> Result<Self> {
        if !(duration > 0.0) || !(spacing > 0.0) {
            return Err(Error::Argument(format!(
                "spline needs positive duration and knot spacing (got {duration}, {spacing})"
            )));
        }
        let mut breaks = vec![0.0];
        let mut k = 1;
        loop {
            let x = k as f64 * spacing;
            if x >= duration - 1e-9 * spacing {
                break;
            }
            breaks.push(x);
            k += 1;
        }
        breaks.push(duration);
        let mut knots = vec![0.0; degree];
        knots.extend_from_slice(&breaks);
        knots.extend(std::iter::repeat_n(duration, degree));
        Ok(Self {
            duration,
            spacing: Some(spacing),
            degree,
            knots,
        })
    }

    /// A single constant column: the homogeneous-rate model.
    pub fn intercept_only(duration: f64) -> Self {
        Self {
            duration,
            spacing: None,
            degree: 0,
            knots: Vec::new(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn is_intercept_only(&self) -> bool {
        self.knots.is_empty()
    }

    /// Number of B-spline functions (0 for the intercept-only basis).
    pub fn dimension(&self) -> usize {
        if self.knots.is_empty() {
            0
        } else {
            self.knots.len() - self.degree - 1
        }
    }

    /// Regression columns including the intercept.
    pub fn column_count(&self) -> usize {
        self.dimension().max(1)
    }

    /// All B-spline values at `t`; times outside `[0, T)` are clamped.
    pub fn eval_all(&self, t: f64, out: &mut [f64]) {
        let n = self.dimension();
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        if n == 0 {
            return;
        }
        let p = self.degree;
        let knots = &self.knots;
        let t = t.clamp(0.0, self.duration);
        // knot span: knots[span] <= t < knots[span + 1], with span <= n - 1
        let mut span = p;
        while span + 1 < n && knots[span + 1] <= t {
            span += 1;
        }
        let mut basis = [0.0f64; 8];
        let mut left = [0.0f64; 8];
        let mut right = [0.0f64; 8];
        basis[0] = 1.0;
        for j in 1..=p {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { basis[r] / denom } else { 0.0 };
                basis[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            basis[j] = saved;
        }
        for (j, b) in basis.iter().take(p + 1).enumerate() {
            out[span - p + j] = *b;
        }
    }

    /// Regression row at `t`: `[1, B_1(t), ..., B_{n-1}(t)]`.
    pub fn design_row(&self, t: f64, out: &mut [f64]) {
        let n = self.dimension();
        if n == 0 {
            out[0] = 1.0;
            return;
        }
        let mut full = vec![0.0; n];
        self.eval_all(t, &mut full);
        out[0] = 1.0;
        out[1..n].copy_from_slice(&full[1..]);
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.knots.windows(2).any(|w| w[1] < w[0]) || self.degree > 7 {
            return Err(Error::Validation(
                "spline knots must be sorted, degree at most 7".into(),
            ));
        }
        Ok(())
    }
}
