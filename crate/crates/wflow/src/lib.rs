//! Simulation of Wasserstein gradient and steepest-descent flows for
//! discrepancy functionals with Riesz kernels `K(x,y) = -||x-y||^r`, `r in (0,2)`.
//!
//! Three time-stepping schemes are provided:
//!
//! * a neural backward (JKO / minimizing movement) scheme that learns the
//!   disintegration of the transport plan with a conditional generator,
//! * a neural forward scheme that Euler-steps along learned steepest-descent
//!   velocity plans,
//! * a plain interacting-particle flow (explicit Euler on particle positions).
//!
//! Because the interaction-energy flow started at a Dirac measure has a closed
//! form (a scaled ball density for `d+r < 4`, a scaled sphere for `d+r >= 4`),
//! the [`analytic`] module doubles as a ground truth against which the schemes
//! are benchmarked; see the `acceptance` test suite.

pub mod analytic;
pub mod error;
pub mod functionals;
pub mod harness;
pub mod measures;
pub mod neural;
pub mod schemes;

pub use error::{Error, Result};
