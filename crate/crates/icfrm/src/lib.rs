//! General linear hypothesis testing in the ill-conditioned functional
//! response model.
//!
//! The model is `y_i(t) = x_i' beta(t) + v_i(t)` with a possibly
//! rank-deficient design. The crate provides:
//!
//! - generalized-inverse estimation and estimability checking ([`model`]);
//! - the pointwise SSH/SSE decomposition and four global test statistics,
//!   two of them scale-invariant ([`stats`]);
//! - nonparametric and parametric bootstrap p-values ([`bootstrap`]);
//! - a deterministic, parallel Monte-Carlo size/power harness ([`sim`]);
//! - the audible-noise factorial design, contrasts, and CSV ingestion
//!   ([`data`]), with a bundled surrogate dataset ([`surrogate`]).

pub mod bootstrap;
pub mod data;
pub mod error;
pub mod grid;
pub mod model;
pub mod report;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod surrogate;

pub use error::{Error, Result};
