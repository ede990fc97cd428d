//! A desk-scale laboratory for sequential function composition and the
//! transformer models that do (or provably cannot) solve it.
//!
//! The crate is organised by role:
//!
//! - [`params`]: exact big-integer parameter schedules and the inequality
//!   chain behind the decoder lower bound.
//! - [`task`]: L-sequential function composition instances, their oracle
//!   evaluator, generator and token layout.
//! - [`numerics`]: deterministic fixed-point storage with an exact
//!   (dyadic) softmax stage.
//! - [`engine`]: decoder/encoder transformer evaluation with optional
//!   per-position parameters.
//! - [`builders`]: hand-constructed weights for the depth, chain-of-thought
//!   and encoder solvers.
//! - [`comm`]: the autoregressive communication model, the
//!   transformer-to-protocol reduction and the fooling-pair adversary.
//! - [`circuits`]: symmetric threshold circuits and their compilation to
//!   encoder transformers.

pub mod builders;
pub mod canonical;
pub mod circuits;
pub mod comm;
pub mod engine;
mod error;
pub mod numerics;
pub mod params;
pub mod task;

pub use error::{Error, Result};
