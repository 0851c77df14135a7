//! Kernel-based quadratic distance (KBQD) tests for the k-sample problem.
//!
//! The pipeline is: pool the samples, build the Gaussian Gram matrix,
//! center it, aggregate into the k x k matrix distance, reduce to the
//! trace and `T_n` statistics, and calibrate by resampling.

pub mod baselines;
pub mod data;
pub mod distributions;
pub mod error;
pub mod io;
pub mod kernel;
pub mod resampling;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod tuning;

pub use data::{DataMatrix, GroupedSamples};
pub use error::{KbqdError, Result};
pub use kernel::{
    center_nonparametric, center_parametric_gram, center_parametric_normal, gaussian_kernel, gram_matrix,
    Bandwidth, Centering, GaussianKernel, GramMatrix, NormalModelParams, ParametricCentering,
};
pub use resampling::{
    critical_value, energy_test, kbqd_test, mmd_test, resample_groups, tn_test, Decision, ResamplingMethod,
    ResamplingPlan, TestResult,
};
pub use rng::RngStream;
pub use stats::{
    centered_gram, ksample_test_statistics, matrix_distance, tn_statistic, trace_statistic, variance_estimate,
    DistanceMatrix, StatisticPair, VarianceEstimate,
};
