use serde::{Deserialize, Serialize};

use super::{check_mode, one_based, Mode};
use crate::error::{Error, Result};
use crate::intensity::IntensityFit;
use crate::spikedata::BinnedTensor;

/// Interaction factor, constant or one value per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZetaValue {
    Constant(f64),
    PerBin(Vec<f64>),
}

impl ZetaValue {
    #[inline]
    pub fn at(&self, bin: usize) -> f64 {
        match self {
            ZetaValue::Constant(z) => *z,
            ZetaValue::PerBin(v) => v[bin],
        }
    }

    fn validate(&self, bins: usize) -> Result<()> {
        let ok = match self {
            ZetaValue::Constant(z) => z.is_finite() && *z >= 0.0,
            ZetaValue::PerBin(v) => v.len() >= bins && v.iter().all(|z| z.is_finite() && *z >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(
                "interaction factors must be finite, nonnegative and cover every bin".into(),
            ))
        }
    }
}

/// `zeta` for the neurons in `subset` (0-based ids, 1-based when serialized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    #[serde(with = "one_based")]
    pub subset: Vec<usize>,
    pub zeta: ZetaValue,
}

impl Interaction {
    pub fn constant(subset: Vec<usize>, zeta: f64) -> Self {
        Self {
            subset,
            zeta: ZetaValue::Constant(zeta),
        }
    }
}

/// Writes the exact-pattern probabilities for one bin into `out`
/// (`2^nu` entries, bit `k` of the index set when neuron `k` fires).
///
/// `p[k]` is the single-neuron firing probability and `zeta[mask]` the factor
/// for the neuron set `mask` (entries with fewer than two bits are ignored).
/// The 1-cell of a set `S` is `prod p * prod_{U in S, |U| >= 2} zeta_U`; exact
/// cells follow by inclusion-exclusion, so the all-zero cell is the remainder.
/// Returns the first negative cell, if any.
fn fill_cells(p: &[f64], zeta: &[f64], out: &mut [f64]) -> Option<(usize, f64)> {
    let nu = p.len();
    let size = 1usize << nu;
    for s in 0..size {
        let mut q = 1.0;
        for (k, pk) in p.iter().enumerate() {
            if s >> k & 1 == 1 {
                q *= pk;
            }
        }
        // every sub-mask with at least two bits
        let mut u = s;
        while u > 0 {
            if u.count_ones() >= 2 {
                q *= zeta[u];
            }
            u = (u - 1) & s;
        }
        out[s] = q;
    }
    for k in 0..nu {
        let bit = 1 << k;
        for s in 0..size {
            if s & bit == 0 {
                out[s] -= out[s | bit];
            }
        }
    }
    let mut bad = None;
    for (s, v) in out.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -1e-14 && bad.is_none() {
                bad = Some((s, *v));
            }
            *v = 0.0;
        }
    }
    bad
}

/// Exact-pattern cell probabilities for one bin. `zeta` is indexed by neuron
/// bitmask and must have `2^nu` entries.
pub fn cells_from_probabilities(p: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() || p.len() > 16 || zeta.len() != 1 << p.len() {
        return Err(Error::Argument(
            "need 1..=16 probabilities and 2^nu interaction factors".into(),
        ));
    }
    if let Some((bin, &value)) = p.iter().enumerate().find(|(_, &v)| !(0.0..1.0).contains(&v)) {
        return Err(Error::Resolution { bin, value });
    }
    let mut out = vec![0.0; zeta.len()];
    match fill_cells(p, zeta, &mut out) {
        Some((pattern, value)) => Err(Error::InfeasibleTable {
            trial: None,
            bin: 0,
            pattern,
            value,
        }),
        None => Ok(out),
    }
}

/// Full `2^nu` pattern distribution per bin (and per trial when built from
/// history-dependent intensities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    #[serde(with = "one_based")]
    neurons: Vec<usize>,
    delta: f64,
    bins: usize,
    trials: Option<usize>,
    cells: Vec<f64>,
}

impl CellTable {
    /// Table from explicit rows (`bins` rows, or `trials * bins` trial-major).
    pub fn from_rows(
        neurons: Vec<usize>,
        delta: f64,
        bins: usize,
        trials: Option<usize>,
        cells: Vec<f64>,
    ) -> Result<Self> {
        let size = 1usize << neurons.len();
        let rows = trials.unwrap_or(1) * bins;
        if neurons.is_empty() || cells.len() != rows * size {
            return Err(Error::Argument(format!(
                "expected {} cells, got {}",
                rows * size,
                cells.len()
            )));
        }
        for (k, row) in cells.chunks(size).enumerate() {
            if row.iter().any(|&v| !(v >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("row {k} is not a probability distribution")));
            }
        }
        Ok(Self {
            neurons,
            delta,
            bins,
            trials,
            cells,
        })
    }

    pub fn neurons(&self) -> &[usize] {
        &self.neurons
    }

    pub fn nu(&self) -> usize {
        self.neurons.len()
    }

    pub fn patterns(&self) -> usize {
        1 << self.neurons.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Trial count for per-trial tables.
    pub fn trials(&self) -> Option<usize> {
        self.trials
    }

    pub fn row(&self, trial: usize, bin: usize) -> &[f64] {
        let size = self.patterns();
        let k = match self.trials {
            Some(_) => trial * self.bins + bin,
            None => bin,
        };
        &self.cells[k * size..(k + 1) * size]
    }

    pub fn cell(&self, trial: usize, bin: usize, pattern: usize) -> f64 {
        self.row(trial, bin)[pattern]
    }

    /// The table with neuron position `k` summed out.
    pub fn sum_out(&self, k: usize) -> Result<Self> {
        if k >= self.nu() || self.nu() < 2 {
            return Err(Error::Argument("cannot sum out that neuron".into()));
        }
        let size = self.patterns();
        let low = (1 << k) - 1;
        let mut cells = Vec::with_capacity(self.cells.len() / 2);
        for row in self.cells.chunks(size) {
            for s in 0..size / 2 {
                let base = (s & low) | ((s & !low) << 1);
                cells.push(row[base] + row[base | 1 << k]);
            }
        }
        let mut neurons = self.neurons.clone();
        neurons.remove(k);
        Ok(Self {
            neurons,
            delta: self.delta,
            bins: self.bins,
            trials: self.trials,
            cells,
        })
    }
}

/// Zeta factors by bitmask over the positions of `neurons`.
pub(crate) fn zeta_masks(neurons: &[usize], zetas: &[Interaction], bins: usize) -> Result<Vec<Option<ZetaValue>>> {
    let mut by_mask: Vec<Option<ZetaValue>> = vec![None; 1 << neurons.len()];
    for z in zetas {
        if z.subset.len() < 2 {
            return Err(Error::Argument("interactions need at least two neurons".into()));
        }
        let mut mask = 0usize;
        for i in &z.subset {
            let pos = neurons
                .iter()
                .position(|n| n == i)
                .ok_or_else(|| Error::Argument(format!("interaction names neuron {} which is not modeled", i + 1)))?;
            mask |= 1 << pos;
        }
        if mask.count_ones() as usize != z.subset.len() || by_mask[mask].is_some() {
            return Err(Error::Argument("duplicate neuron or interaction".into()));
        }
        z.zeta.validate(bins)?;
        by_mask[mask] = Some(z.zeta.clone());
    }
    Ok(by_mask)
}

/// Builds the pattern distribution implied by fitted intensities and
/// interaction factors. Interactions not listed are 1.
pub fn build_cell_table(
    fits: &[IntensityFit],
    zetas: &[Interaction],
    delta: f64,
    mode: Mode,
    binned: &BinnedTensor,
) -> Result<CellTable> {
    if !(2..=3).contains(&fits.len()) {
        return Err(Error::Argument(format!(
            "cell tables cover 2 or 3 neurons, got {}",
            fits.len()
        )));
    }
    if (delta - binned.delta()).abs() > 1e-12 * delta {
        return Err(Error::Argument(format!(
            "table width {delta} differs from data width {}",
            binned.delta()
        )));
    }
    for f in fits {
        check_mode(f, mode)?;
    }
    let neurons: Vec<usize> = fits.iter().map(|f| f.neuron).collect();
    let bins = binned.bins();
    let by_mask = zeta_masks(&neurons, zetas, bins)?;
    let grids = fits.iter().map(|f| f.rates_on(binned)).collect::<Result<Vec<_>>>()?;
    let trials = match mode {
        Mode::Marginal => None,
        Mode::Conditional => Some(binned.trials()),
    };
    let size = 1usize << fits.len();
    let mut cells = vec![0.0; trials.unwrap_or(1) * bins * size];
    let mut p = vec![0.0; fits.len()];
    let mut zeta = vec![1.0; size];
    for r in 0..trials.unwrap_or(1) {
        for m in 0..bins {
            for (k, g) in grids.iter().enumerate() {
                p[k] = g.at(r, m) * delta;
                if p[k] >= 1.0 {
                    return Err(Error::Resolution { bin: m, value: p[k] });
                }
            }
            for (mask, z) in by_mask.iter().enumerate() {
                zeta[mask] = z.as_ref().map_or(1.0, |z| z.at(m));
            }
            let row = (r * bins + m) * size;
            if let Some((pattern, value)) = fill_cells(&p, &zeta, &mut cells[row..row + size]) {
                return Err(Error::InfeasibleTable {
                    trial: trials.map(|_| r),
                    bin: m,
                    pattern,
                    value,
                });
            }
        }
    }
    Ok(CellTable {
        neurons,
        delta,
        bins,
        trials,
        cells,
    })
}
