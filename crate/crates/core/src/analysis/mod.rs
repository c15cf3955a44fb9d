//! Monte Carlo error estimation, closed-form bound calculators, and
//! generalized-derivative functionals.

mod bounds;
mod bump;
mod ensemble;
mod gendiff;

pub use bounds::{
    appendix_a_constants, lemma1_moment_bound, optimize_mu, theorem1_bound, AppendixAConstants,
    BoundReport,
};
pub use bump::{make_bump, TestFunction, MAX_DERIVATIVE_ORDER};
pub use ensemble::{ensemble_ms_error, path_seed, per_time_mean_stderr, EnsembleStats};
pub use gendiff::{generalized_derivative_check, trapezoid, GeneralizedDerivativeReport};
