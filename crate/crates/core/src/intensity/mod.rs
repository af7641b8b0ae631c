//! Per-neuron intensity estimation by spline Poisson regression.

mod design;
mod fit;
mod irls;
mod spline;

pub(crate) use design::spline_rows;
pub use design::{
    build_conditional_design, build_marginal_design, DesignMatrix, HistoryCovariateSpec, HistoryCovariates, RowIndex,
};
pub use fit::{eval_intensity, fit_poisson_irls, IntensityFit, RateGrid};
pub use irls::{irls_poisson, poisson_loglik, poisson_score, IrlsOptions, IrlsOutcome};
pub use spline::SplineBasis;
