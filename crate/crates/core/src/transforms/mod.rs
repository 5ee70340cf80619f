//! Structured linear operators: Walsh–Hadamard transform, adaptive
//! FastFood, block-diagonal products, block-Hadamard mixing and the
//! rectangular adapter that fits square operators to `m×n` slots.

mod adapter;
mod block;
mod fastfood;
mod fwht;

pub use adapter::{RectAdapter, RectGrads};
pub use block::{BlockDiagGrads, BlockDiagLayer, BlockHadamard};
pub use fastfood::{FastFoodGrads, FastFoodLayer};
#[cfg(debug_assertions)]
pub use fwht::{butterfly_count, reset_butterfly_count};
pub use fwht::{fwht, fwht_in_place, fwht_rows};

pub(crate) use block::{block_diag_backward_slices, block_diag_forward_slices};
pub(crate) use fastfood::{ff_backward_rows, ff_forward_rows};

/// Parameter and cost summary of one structured operator.
///
/// `flop_per_token` counts forward multiply-adds per input row. Hadamard
/// stages are priced at zero; only diagonal and block products count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransformCensus {
    pub trainable: u64,
    pub frozen: u64,
    pub emulated: u64,
    pub flop_per_token: u64,
}

/// Operators that can report their own census.
pub trait Structured {
    fn census(&self) -> TransformCensus;
}

pub fn transform_census<L: Structured + ?Sized>(layer: &L) -> TransformCensus {
    layer.census()
}

pub(crate) fn check_pow2(n: usize, what: &str) -> crate::Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(crate::Error::invalid(format!("{what} must be a power of two, got {n}")));
    }
    Ok(())
}
