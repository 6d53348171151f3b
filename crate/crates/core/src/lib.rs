//! Simulation and verification of linear-network learning dynamics on the
//! structured identity mapping (SIM) task.
//!
//! Training data are Gaussian clusters placed on the first `s` coordinate
//! axes; the model learns the identity map and is evaluated out of
//! distribution at the sum of cluster centers. The crate provides
//!
//! * [`sim`]: data model, covariance, test points and losses;
//! * [`one_layer`]: the closed-form gradient-flow solution of `f(x) = Wx`
//!   and an explicit Euler cross-check;
//! * [`two_layer`]: the discrete Jacobian recursion of `f(x) = UUᵀx`, a
//!   U-space gradient descent simulator and initialization schemes;
//! * [`theory`]: machine-checkable assumptions and lemma bounds evaluated
//!   along recorded trajectories;
//! * [`phenomenology`]: descent counting, learning order, slowdown and
//!   lattice (topological order) analyses;
//! * [`experiment`] and [`io`]: configuration files, the experiment runner
//!   and deterministic CSV/JSON artifacts.

pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod one_layer;
pub mod phenomenology;
pub mod sim;
pub mod theory;
pub mod two_layer;

pub use error::{Result, SimError};
