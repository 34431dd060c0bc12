//! Impairment-aware design and analysis of a full-duplex amplify-and-forward
//! MIMO relay link.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: complex dense primitives (vectorization, Kronecker products,
//!   diagonal selection, Hermitian square roots, guarded linear solves).
//! * [`system`]: configuration, channel draws and the CSI error model.
//! * [`simulate`]: a symbol-level simulator of the whole relay chain.
//! * [`covariance`]: closed-form covariances, MSE, rate and MMSE receiver.
//! * [`qcqp`]: the convex quadratic subproblem solver.
//! * [`pdd`]: the penalty dual decomposition optimizer and its extensions.
//! * [`baselines`]: comparison designs.
//! * [`experiment`]: Monte Carlo sweeps, validation and reporting.

pub mod baselines;
pub mod covariance;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod pdd;
pub mod qcqp;
pub mod simulate;
pub mod system;

pub use error::{Error, Result};
