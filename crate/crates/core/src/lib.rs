//! Asymptotic spectral densities and ergodic capacities of block multiantenna
//! channels.
//!
//! The library models a channel as a sum of products of independent block
//! Gaussian matrices (optionally sandwiched between Haar-rotated diagonal
//! factors), computes the matricial Cauchy transform of the limiting operator
//! by subordination fixed points in `2d x 2d` matrices, recovers the spectral
//! density of `H Phi H*` by Stieltjes inversion, and maximizes the capacity
//! functional over trace-one input covariances. A finite-N Monte Carlo harness
//! samples the same ensembles and provides ground truth for every asymptotic
//! quantity.
//!
//! Module map:
//! - [`linalg`]: dense complex linear algebra primitives and validated matrix
//!   domain types.
//! - [`covariance`]: the block covariance mapping `K`, the input melding of a
//!   transmit covariance `Phi`, and the completely positive map `eta`.
//! - [`transforms`]: matricial Cauchy transforms and their additive and
//!   multiplicative subordination combinators.
//! - [`density`]: Stieltjes inversion to a grid density and spectral
//!   functionals (log-moment, power moments).
//! - [`channel`]: the channel expression tree and its compilation into a
//!   Cauchy-transform evaluator.
//! - [`capacity`]: concave maximization of the capacity functional over the
//!   trace simplex.
//! - [`montecarlo`]: finite-N sampling, empirical spectra and mutual
//!   information, and the symmetrization/symmetry probes.

pub mod capacity;
pub mod channel;
pub mod covariance;
pub mod density;
mod error;
mod fixed_point;
pub mod linalg;
pub mod montecarlo;
pub mod transforms;

pub use error::{Error, Result};
pub use fixed_point::FixedPointConfig;
