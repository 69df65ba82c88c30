//! Exact analysis and Monte Carlo simulation of customer-randomized A/B
//! experiments on a platform with a finite stock of listings.
//!
//! The platform is a birth-death chain on the number of booked listings.
//! Randomizing customers between a control and a treatment booking profile
//! makes the two arms share inventory, so the difference-in-means estimator
//! is biased and its textbook variance estimate is wrong. This crate computes
//! the relevant quantities exactly (steady states, asymptotic variances,
//! Cramér-Rao bounds, test power) and simulates the experiment directly.

// `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod cramer_rao;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod power;
pub mod scenarios;
pub mod simulator;

pub use nalgebra as na;

pub use asymptotics::{
    centered_variance, cov_tail_sum, cov_tail_truncated, dm_asymptotic_variance, fundamental_solve,
    AsymptoticReport,
};
pub use cramer_rao::{
    cr_lower_bound, growth_scan, recursion_residuals, value_function, value_function_by_recursion,
    CRBound, GrowthRow, GrowthScan, LinearFit, ModelFamily, RecursionResiduals, ValueFunction,
};
pub use error::{Error, Result};
pub use kernels::{
    augmented_kernel, interarrival_kernel, propagate_arrival_distributions, seen_state_kernel,
    AugmentedKernel, SeenStateKernel,
};
pub use model::{
    ade, aggregate_types, booking_rate, classify_sign, dominates, gte, steady_state, Arm,
    CustomerType, Distribution, PlatformModel, SignClass, TauForm, ValidationMode,
};
pub use power::{
    fnp_curves, naive_test_power, normal_quantile, normal_upper_tail, rejection_curves,
    unbiased_test_power, CurveMode, PowerCurve, PowerRow,
};
pub use scenarios::{
    check_meanfield_hypotheses, example_null_pbar, example_sign_inconsistent_alt,
    example_sign_inconsistent_alt_with, example_sign_inconsistent_null,
    example_sign_inconsistent_null_with, logit_scenario, meanfield_family, LogitFamily,
    LogitLimits, LogitParams, MeanFieldFamily, MeanFieldLimits, Scaling, TabulatedLimits, TauShape,
};
pub use simulator::{
    exchangeable_oracle, outcomes_to_csv, replication_rng, run_replications,
    run_replications_detailed, simulate_trajectory, InitialState, JointOutcomes, OracleReport,
    ReplicationSummary, SimConfig, TrajectoryOutcome, OUTCOME_CSV_HEADER,
};
