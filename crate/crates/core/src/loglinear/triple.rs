use serde::{Deserialize, Serialize};

use super::ipf::{ipf_no_three_way, IpfOptions, IpfOutcome};
use super::xi::{check_events, check_mode, expected_pair};
use super::{Mode, XiEstimate, ZetaValue};
use crate::error::{Error, Result};
use crate::intensity::{IntensityFit, RateGrid};
use crate::spikedata::{BinnedTensor, JointEventSet};

/// Pair positions in the order `(0,1), (0,2), (1,2)`.
pub(crate) const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Three marginal models plus pairwise interaction factors, without a
/// three-way term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleModel {
    pub fits: Vec<IntensityFit>,
    /// Factors for the pairs `(0,1), (0,2), (1,2)` of `fits`.
    pub pairwise: [ZetaValue; 3],
    pub ipf: Option<IpfOutcome>,
}

impl TripleModel {
    pub fn new(fits: Vec<IntensityFit>, pairwise: [ZetaValue; 3]) -> Result<Self> {
        if fits.len() != 3 {
            return Err(Error::Argument("a triple model needs three fits".into()));
        }
        Ok(Self {
            fits,
            pairwise,
            ipf: None,
        })
    }

    pub fn neurons(&self) -> [usize; 3] {
        [self.fits[0].neuron, self.fits[1].neuron, self.fits[2].neuron]
    }

    /// Pairwise interactions in the form `build_cell_table` takes.
    pub fn interactions(&self) -> Vec<super::Interaction> {
        let n = self.neurons();
        PAIRS
            .iter()
            .zip(&self.pairwise)
            .map(|(&(a, b), z)| super::Interaction {
                subset: vec![n[a], n[b]],
                zeta: z.clone(),
            })
            .collect()
    }
}

/// Per-bin 2x2x2 counts pooled over trials; bit `k` is `neurons[k]`.
pub fn triple_count_tables(binned: &BinnedTensor, neurons: [usize; 3]) -> Result<Vec<[f64; 8]>> {
    if neurons.iter().any(|&i| i >= binned.neurons()) {
        return Err(Error::Argument("neuron out of range".into()));
    }
    let mut tables = vec![[0.0; 8]; binned.bins()];
    for r in 0..binned.trials() {
        let rows = neurons.map(|i| binned.row(r, i));
        for (m, t) in tables.iter_mut().enumerate() {
            let s = rows[0][m] as usize | (rows[1][m] as usize) << 1 | (rows[2][m] as usize) << 2;
            t[s] += 1.0;
        }
    }
    Ok(tables)
}

/// Fits the no-three-way model to the pooled counts and reads off each pair's
/// factor as the fitted joint count over its independence expectation.
pub fn ipf_fit_triple(
    observed: &[[f64; 8]],
    fits: Vec<IntensityFit>,
    binned: &BinnedTensor,
    opts: &IpfOptions,
) -> Result<TripleModel> {
    if fits.len() != 3 {
        return Err(Error::Argument("a triple model needs three fits".into()));
    }
    let mut pooled = [0.0; 8];
    for t in observed {
        for (p, v) in pooled.iter_mut().zip(t) {
            *p += v;
        }
    }
    let outcome = ipf_no_three_way(&pooled, opts)?;
    let grids = fits.iter().map(|f| f.rates_on(binned)).collect::<Result<Vec<_>>>()?;
    let mut pairwise = [
        ZetaValue::Constant(1.0),
        ZetaValue::Constant(1.0),
        ZetaValue::Constant(1.0),
    ];
    for (k, &(a, b)) in PAIRS.iter().enumerate() {
        let both = (1 << a) | (1 << b);
        let joint: f64 = outcome
            .cells
            .iter()
            .enumerate()
            .filter(|(s, _)| s & both == both)
            .map(|(_, v)| v)
            .sum();
        let expected = expected_pair(&grids[a], &grids[b], 0, binned.delta());
        if !(expected > 0.0) {
            return Err(Error::DegenerateModel(format!(
                "pair ({}, {}) has zero expected joint count",
                a + 1,
                b + 1
            )));
        }
        pairwise[k] = ZetaValue::Constant(joint / expected);
    }
    Ok(TripleModel {
        fits,
        pairwise,
        ipf: Some(outcome),
    })
}

/// `sum_r sum_m delta^3 lambda1 lambda2 lambda3 zeta12 zeta13 zeta23`.
pub fn expected_triple(grids: &[RateGrid], pairwise: &[ZetaValue; 3], delta: f64) -> f64 {
    let (trials, bins) = (grids[0].trials(), grids[0].bins());
    let mut total = 0.0;
    for r in 0..trials {
        if r > 0 && grids.iter().all(|g| !g.per_trial()) {
            total *= trials as f64;
            break;
        }
        for m in 0..bins {
            let z: f64 = pairwise.iter().map(|z| z.at(m)).product();
            total += grids[0].at(r, m) * grids[1].at(r, m) * grids[2].at(r, m) * z;
        }
    }
    total * delta.powi(3)
}

/// Three-way excess-synchrony factor relative to the pairwise model.
pub fn estimate_xi_123(
    events3: &JointEventSet,
    triple: &TripleModel,
    mode: Mode,
    binned: &BinnedTensor,
) -> Result<XiEstimate> {
    let subset = events3.subset();
    if subset.len() != 3 || events3.lag_bins() != 0 {
        return Err(Error::Argument("three-way estimate needs a synchronous triple".into()));
    }
    if subset != triple.neurons() {
        return Err(Error::Argument(
            "event set and triple model name different neurons".into(),
        ));
    }
    for f in &triple.fits {
        check_mode(f, mode)?;
    }
    check_events(events3, binned)?;
    let grids = triple
        .fits
        .iter()
        .map(|f| f.rates_on(binned))
        .collect::<Result<Vec<_>>>()?;
    let expected = expected_triple(&grids, &triple.pairwise, binned.delta());
    XiEstimate::from_counts(subset.to_vec(), mode, 0, binned.delta(), events3.count(), expected)
}
