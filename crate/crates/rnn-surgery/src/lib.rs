//! Weight-level surgery on ReLU networks: exact FNN/RNN/MRNN evaluators,
//! network combinators, FNN <-> RNN conversions, simultaneous past-dependent
//! sequence approximation, and a regression harness for beta-mixing data.
//!
//! Start with the `examples/` directory; each example is a runnable tour of
//! one capability.

pub mod approx;
pub mod combinators;
pub mod conversion;
pub mod error;
pub mod json;
pub mod linalg;
pub mod network;
pub mod regression;

pub use error::{Result, SurgeryError};
