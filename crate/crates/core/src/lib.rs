//! Workbench for testing whether spurious parameters bend the loss-vs-compute
//! curve of small autoregressive transformers.
//!
//! Three model families share one decoder implementation: dense baselines,
//! "doped" models that interleave frozen random MLP layers, and structured
//! models whose MLP linears are adaptive FastFood or block-diagonal /
//! block-Hadamard operators. Training runs log FLOP budgets under two
//! frozen-parameter cost scenarios, and `scalefit` turns those logs into
//! power-law fits.

pub mod accounting;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod scalefit;
pub mod seed;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use numerics::{Exec, Scalar, Tensor};
