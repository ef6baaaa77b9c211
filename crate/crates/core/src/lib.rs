//! Estimation of the mean and covariance of a multivariate normal from
//! samples that are only revealed inside a truncation set.
//!
//! The truncation set is never observed directly. The estimator only asks a
//! membership oracle whether a point lies in the set, then runs projected
//! stochastic gradient descent on the negative log-likelihood written in
//! natural parameters `(nu, T) = (Sigma^-1 mu, Sigma^-1)`, where it is convex.
//!
//! Module map:
//!
//! - [`params`]: parameter representations, affine maps, error metrics
//! - [`sets`]: membership oracles and concrete truncation sets
//! - [`sampling`]: seeded Gaussian and rejection sampling
//! - [`likelihood`]: stochastic gradients and Monte-Carlo NLL estimates
//! - [`projection`]: the feasible domain and Euclidean projection onto it
//! - [`estimator`]: initialization, whitening, SGD runs and selection
//! - [`lowerbound`]: the unknown-set indistinguishability construction

pub mod error;
pub mod estimator;
pub mod likelihood;
pub(crate) mod linalg;
pub mod lowerbound;
pub mod params;
pub mod projection;
pub mod rng;
pub mod sampling;
pub mod sets;
pub mod stats;

pub use error::{Error, Result};
pub use estimator::{
    empirical_moments, estimate, make_whitening, select_estimate, sgd_run, DomainChoice,
    EstimateReport, RunTrace, SgdConfig,
};
pub use params::{frobenius_error, mahalanobis_error, AffineMap, FlatParams, GaussianParams, NaturalParams};
pub use projection::{DomainSpec, ProjectionResult};
pub use rng::RngStream;
pub use sampling::RejectionConfig;
pub use sets::{MembershipOracle, SetSpec, TransformedSet, TruncationSet};
