//! Moment-matching Monte Carlo.
//!
//! A library for variance-reduced Monte Carlo integration of
//! `E[f(X)]` when the first (and second) moments of the underlying are
//! known in advance:
//!
//! * first order matching recenters a sample batch on the known mean;
//! * second order matching additionally maps the batch so its biased sample
//!   covariance equals the known covariance exactly;
//! * a nonlinear scheme extends both to arbitrary continuous scalar
//!   underlyings through their CDF/quantile pair.
//!
//! Matched estimators come with standard errors computed as a by-product of
//! the same pass that produces the estimate, and with closed-form
//! `lim N * Var` oracles for normal underlyings. Sampling is counter-based
//! and splittable: every draw is a pure function of
//! `(seed, stream id, counter)`, so results are bitwise reproducible for
//! any worker count.

pub mod error;
pub mod estimators;
pub mod linalg;
pub mod moment_match;
pub mod numeric;
pub mod payoffs;
pub mod quad;
pub mod sampling;

pub use error::{Error, Result};
pub use estimators::{
    asym_var_mm1_general, asym_var_mm1_normal_rough, asym_var_mm1_normal_smooth,
    asym_var_mm2_general_scalar, asym_var_mm2_normal_rough, asym_var_mm2_normal_smooth,
    estimate_integrand_moments, mm1_estimate, mm2_estimate, nonlinear_mm_estimate, plain_estimate,
    EstimateReport, IntegrandMoments, Method, VarianceComponents,
};
pub use linalg::{cholesky, sym_inv_sqrt, sym_sqrt, LowerTriangular, SymMatrix, MAX_DIM};
pub use moment_match::{
    match_first_order, match_second_order, nonlinear_match, DistributionMap, MatchOrder,
    MatchedBatch,
};
pub use numeric::{pairwise_mean, pairwise_sum};
pub use payoffs::{
    down_in_put, down_in_put_closed_form, gbm_terminal, DownInPutPayoff, GbmMap, MarketParams,
    TestIntegrand,
};
pub use quad::adaptive_simpson;
pub use sampling::{
    correlate, draw_standard_batch, sample_moments, standard_normal_cdf, standard_normal_quantile,
    MomentSpec, RngStream, SampleBatch,
};
