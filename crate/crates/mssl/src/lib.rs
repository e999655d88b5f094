//! Multivariate spike-and-slab LASSO (mSSL).
//!
//! Joint MAP estimation for the multi-outcome Gaussian regression model
//!
//! ```text
//! y_i | x_i ~ N_q(B' x_i, Omega^{-1}),   i = 1..n,
//! ```
//!
//! where the p x q coefficient matrix `B` and the q x q precision matrix
//! `Omega` are both sparse. Every entry of `B` and every off-diagonal of
//! `Omega` carries a two-point mixture of Laplace densities (a sharp "spike"
//! and a diffuse "slab"); the diagonal of `Omega` carries an exponential
//! prior, and `Omega` is restricted to matrices with smallest eigenvalue
//! above a floor `tau`.
//!
//! The crate provides:
//!
//! - [`model`]: the likelihood and the divergences (Kullback-Leibler,
//!   its variance, Hellinger log-affinity) used to diagnose how fast the
//!   fitted model approaches the truth;
//! - [`prior`]: mixture prior densities, sample-size-driven hyperparameter
//!   schedules, and the selection thresholds they induce;
//! - [`solver`]: an expectation-conditional-maximization loop that
//!   alternates exact scalar updates of `B` with penalized log-determinant
//!   block updates of `Omega`;
//! - [`metrics`]: contraction-rate quantities (`epsilon_n`, restricted
//!   eigenvalues, error ratios, support recovery);
//! - [`sim`]: a seeded simulation harness generating synthetic problems and
//!   running replicated experiments over a grid of sample sizes;
//! - [`report`]: aggregation of experiment cells into medians, slopes, and
//!   serializable summaries;
//! - [`io`]: the on-disk CSV/JSON formats used by the `mssl` binary.

pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod prior;
pub mod report;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
