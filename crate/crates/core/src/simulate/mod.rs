//! Marked point processes with shared marks, their binned counterparts, and
//! simulation under fitted null models.

mod binary;
mod likelihood;
mod marked;
mod probe;
mod recursion;
mod spec;

pub use binary::{simulate_binary_conditional, simulate_binary_null, FittedIntensity, HistoryIntensity, PastView};
pub use likelihood::loglik_marked;
pub use marked::{
    sequences_to_experiment, simulate_marked, simulate_marked_trials, write_marked_csv, MarkedEvent,
    MarkedEventSequence,
};
pub use probe::{convergence_probe, log_log_slope, ConvergenceReport, ProbeOptions, ProbeRow};
pub use recursion::{empirical_zeta, limit_zeta, partition_sum, EmpiricalZeta};
pub use spec::{Curve, HistoryKernel, InteractionSpec, Mark, MarkedProcessSpec, NeuronSpec, Shape};
