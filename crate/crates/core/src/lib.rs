//! Finite-configuration stochastic processes and their unitary correspondence.
//!
//! Transition matrices use the column-stochastic convention: `gamma[(i, j)]`
//! is the probability of configuration `i` at time `t` given configuration
//! `j` at time 0, so every column sums to one and `p(t) = gamma * p(0)`.
//! Much of the Markov-chain literature is row-stochastic; transpose when
//! importing such matrices.
//!
//! Modules:
//! - [`stochastic`]: validated stochastic matrices, marginalization, divisibility.
//! - [`quantum`]: Hermitian generators, propagators, Born rule, density operators.
//! - [`dilation`]: unitary preimages of stochastic matrices, dilution, gauge fixing.
//! - [`division`]: system/environment division events and collision statistics.
//! - [`classical`]: Monte Carlo checks of centre-of-mass concentration and Ehrenfest dynamics.
//! - [`fock`]: truncated Fock space in a box and Dyson-series scattering.
//! - [`scenario`]: config-driven reproducible runs with manifests.

// NaN must fail validation, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod dilation;
pub mod division;
mod error;
pub mod fock;
pub mod io;
pub mod linalg;
pub mod quantum;
pub mod rng;
pub mod scenario;
pub mod stochastic;

pub use error::{Error, Result};
pub use num_complex::Complex64;
