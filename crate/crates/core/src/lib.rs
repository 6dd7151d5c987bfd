//! Wishart matrices built from Wiener-chaos entries.
//!
//! Two regimes are covered. In the independent regime each entry is a
//! unit-variance multiple Wiener integral and `sqrt(d) W` approaches a GOE-type
//! matrix. In the correlated regime the rows are increments of independent
//! Rosenblatt processes and the renormalized matrix approaches a diagonal
//! matrix of Rosenblatt variables.

pub mod acceptance;
pub mod chaos;
pub mod cli;
pub mod config;
pub mod error;
pub mod fractional;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod rosenblatt;
pub mod wishart;

pub use error::{Error, Result};
