//! Excess-synchrony estimators, cell tables and IPF for loglinear models of
//! binned spike patterns.

mod cells;
mod ipf;
mod triple;
mod xi;
mod zeta;

use serde::{Deserialize, Serialize};

pub use cells::{build_cell_table, cells_from_probabilities, CellTable, Interaction, ZetaValue};
pub use ipf::{ipf_no_three_way, IpfOptions, IpfOutcome};
pub use triple::{estimate_xi_123, expected_triple, ipf_fit_triple, triple_count_tables, TripleModel};
pub use xi::{estimate_xi_pair, expected_pair, XiEstimate};
pub use zeta::{estimate_zeta_timevarying, ZetaCurve};

pub(crate) use cells::zeta_masks;
pub(crate) use xi::{check_mode, one_based};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Intensities depend on time only.
    Marginal,
    /// Intensities also depend on each trial's realized spiking history.
    Conditional,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Marginal => "marginal",
            Mode::Conditional => "conditional",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "marginal" => Ok(Mode::Marginal),
            "conditional" => Ok(Mode::Conditional),
            other => Err(crate::Error::Argument(format!("unknown mode {other:?}"))),
        }
    }
}
