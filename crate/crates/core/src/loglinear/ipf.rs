//! Iterative proportional fitting of the no-three-way-interaction model on a
//! 2x2x2 table. Cell `s` holds the count for the pattern whose bit `k` is set
//! when neuron `k` fired.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to every cell when an observed two-way margin is zero.
pub const ZERO_MARGIN_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfOptions {
    /// Largest allowed L1 distance between a fitted and observed two-way margin.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpfOutcome {
    pub cells: [f64; 8],
    pub cycles: usize,
    pub margin_error: f64,
    /// Whether the observed table was smoothed before fitting.
    pub smoothed: bool,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn margin(cells: &[f64; 8], (i, j): (usize, usize)) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (s, v) in cells.iter().enumerate() {
        out[(s >> i & 1) | (s >> j & 1) << 1] += v;
    }
    out
}

fn margin_error(fitted: &[f64; 8], observed: &[f64; 8]) -> f64 {
    PAIRS
        .iter()
        .map(|&pair| {
            let (f, o) = (margin(fitted, pair), margin(observed, pair));
            f.iter().zip(&o).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Maximum-likelihood cells under the model with all two-way interactions
/// and no three-way term. The fit starts from a uniform table and cycles
/// through the three two-way margins.
pub fn ipf_no_three_way(observed: &[f64; 8], opts: &IpfOptions) -> Result<IpfOutcome> {
    if observed.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Argument("IPF counts must be finite and nonnegative".into()));
    }
    let mut target = *observed;
    let smoothed = PAIRS.iter().any(|&pair| margin(observed, pair).contains(&0.0));
    if smoothed {
        target.iter_mut().for_each(|v| *v += ZERO_MARGIN_EPSILON);
    }
    let total: f64 = target.iter().sum();
    let mut fitted = [total / 8.0; 8];
    let mut err = f64::INFINITY;
    for cycle in 1..=opts.max_iter {
        for &pair in &PAIRS {
            let (f, o) = (margin(&fitted, pair), margin(&target, pair));
            for (s, v) in fitted.iter_mut().enumerate() {
                let a = (s >> pair.0 & 1) | (s >> pair.1 & 1) << 1;
                *v *= o[a] / f[a];
            }
        }
        err = margin_error(&fitted, &target);
        if err <= opts.tol {
            return Ok(IpfOutcome {
                cells: fitted,
                cycles: cycle,
                margin_error: err,
                smoothed,
            });
        }
    }
    Err(Error::IpfConvergence {
        iterations: opts.max_iter,
        error: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook loop over a 3-d array, fitting the margins in a different
    /// order from a different starting table.
    fn reference_ipf(obs: &[f64; 8]) -> [f64; 8] {
        let n = |a: usize, b: usize, c: usize| obs[a | b << 1 | c << 2];
        let mut m = [[[1.0f64; 2]; 2]; 2];
        for _ in 0..20_000 {
            // BC margin
            for b in 0..2 {
                for c in 0..2 {
                    let fit: f64 = (0..2).map(|a| m[a][b][c]).sum();
                    let o: f64 = (0..2).map(|a| n(a, b, c)).sum();
                    for a in 0..2 {
                        m[a][b][c] *= o / fit;
                    }
                }
            }
            // AC margin
            for a in 0..2 {
                for c in 0..2 {
                    let fit: f64 = (0..2).map(|b| m[a][b][c]).sum();
                    let o: f64 = (0..2).map(|b| n(a, b, c)).sum();
                    for b in 0..2 {
                        m[a][b][c] *= o / fit;
                    }
                }
            }
            // AB margin
            for a in 0..2 {
                for b in 0..2 {
                    let fit: f64 = (0..2).map(|c| m[a][b][c]).sum();
                    let o: f64 = (0..2).map(|c| n(a, b, c)).sum();
                    for c in 0..2 {
                        m[a][b][c] *= o / fit;
                    }
                }
            }
        }
        let mut out = [0.0; 8];
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    out[a | b << 1 | c << 2] = m[a][b][c];
                }
            }
        }
        out
    }

    #[test]
    fn product_table_is_a_fixed_point() {
        let (pa, pb, pc) = (0.3, 0.6, 0.2);
        let mut t = [0.0; 8];
        for (s, v) in t.iter_mut().enumerate() {
            let f = |bit: usize, p: f64| if s >> bit & 1 == 1 { p } else { 1.0 - p };
            *v = 1000.0 * f(0, pa) * f(1, pb) * f(2, pc);
        }
        let out = ipf_no_three_way(&t, &IpfOptions::default()).unwrap();
        assert_eq!(out.cycles, 1);
        for (a, b) in out.cells.iter().zip(&t) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_margin_is_smoothed() {
        let t = [10.0, 5.0, 7.0, 0.0, 3.0, 0.0, 2.0, 0.0];
        let out = ipf_no_three_way(&t, &IpfOptions::default()).unwrap();
        assert!(out.smoothed);
        assert!(out.cells.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bad_counts_and_non_convergence() {
        assert!(ipf_no_three_way(&[-1.0; 8], &IpfOptions::default()).is_err());
        let t = [5.0, 1.0, 2.0, 9.0, 4.0, 8.0, 1.0, 3.0];
        let r = ipf_no_three_way(&t, &IpfOptions { tol: 0.0, max_iter: 3 });
        assert!(matches!(r, Err(Error::IpfConvergence { iterations: 3, .. })));
    }

    proptest! {
        #[test]
        fn matches_reference_and_margins(t in prop::array::uniform8(0.01f64..50.0)) {
            let out = ipf_no_three_way(&t, &IpfOptions::default()).unwrap();
            let reference = reference_ipf(&t);
            for (a, b) in out.cells.iter().zip(&reference) {
                prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
            prop_assert!(margin_error(&out.cells, &t) < 1e-10);
        }
    }
}
