use crate::error::Result;
use crate::numerics::{for_each_chunk, Exec, Scalar, Tensor};

use super::check_pow2;

#[cfg(debug_assertions)]
thread_local! {
    static BUTTERFLIES: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Additions plus subtractions performed by [`fwht_in_place`] on this
/// thread (two per butterfly).
#[cfg(debug_assertions)]
pub fn butterfly_count() -> u64 {
    BUTTERFLIES.with(|c| c.get())
}

#[cfg(debug_assertions)]
pub fn reset_butterfly_count() {
    BUTTERFLIES.with(|c| c.set(0));
}

/// Unnormalized in-place Walsh–Hadamard transform of a power-of-two slice:
/// `n·log₂ n` butterflies.
pub fn fwht_in_place<T: Scalar>(x: &mut [T]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in x.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        h *= 2;
    }
    #[cfg(debug_assertions)]
    BUTTERFLIES.with(|c| c.set(c.get() + n as u64 * n.trailing_zeros() as u64));
}

/// Transforms every `n`-wide row of `data`.
pub fn fwht_rows<T: Scalar>(exec: Exec, data: &mut [T], n: usize, normalize: bool) {
    let scale = T::from_f64_lossy(1.0 / (n as f64).sqrt());
    let rows_per_task = (4096 / n).max(1);
    for_each_chunk(exec, data, rows_per_task * n, |_, chunk| {
        for row in chunk.chunks_exact_mut(n) {
            fwht_in_place(row);
            if normalize {
                row.iter_mut().for_each(|v| *v *= scale);
            }
        }
    });
}

/// Walsh–Hadamard transform over the last axis, optionally scaled by
/// `1/√n`. The transform is symmetric, so it is its own backward pass.
pub fn fwht<T: Scalar>(x: &Tensor<T>, normalize: bool) -> Result<Tensor<T>> {
    let n = x.last_dim();
    check_pow2(n, "fwht width")?;
    let mut out = x.clone();
    fwht_rows(Exec::auto(), out.data_mut(), n, normalize);
    Ok(out)
}
