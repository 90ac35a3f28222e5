//! Predicted exponents, log-log rate fits and the rate experiments.

mod experiments;
mod rates;

pub use experiments::{
    is_nonincreasing, run_coupling_experiment, run_experiment, run_lln_experiment,
    run_marginal_rate_experiment, run_pde_error_experiment, ExperimentKind, LlnPsi,
    DEFAULT_LLN_REPS, LLN_BOUND_M, MIN_COUPLING_REPS, MIN_MARGINAL_RATE_REPS,
};
pub use rates::{
    fit_loglog_slope, predicted_zeta, valid_ranges, RatePrediction, RateRow, RateTable, SlopeFit,
    ValidRanges,
};
