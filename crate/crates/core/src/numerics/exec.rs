#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for the data-parallel loops (gemm row blocks,
/// attention heads, batched transforms).
///
/// Work is always split into the same fixed-size chunks, so both modes
/// produce bit-identical results. Without the `parallel` feature,
/// `Parallel` falls back to the sequential path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` when built with the `parallel` feature.
    pub fn auto() -> Exec {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk`-sized pieces of
/// `data` (the last may be shorter).
pub fn for_each_chunk<T, F>(exec: Exec, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    assert!(chunk > 0, "chunk size must be positive");
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        _ => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

/// Like [`for_each_chunk`], walking two buffers in lockstep: chunk `i` of
/// `a` has `chunk_a` elements and is paired with chunk `i` of `b`.
pub fn for_each_chunk_pair<A, B, F>(exec: Exec, a: &mut [A], chunk_a: usize, b: &mut [B], chunk_b: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Send + Sync,
{
    assert!(chunk_a > 0 && chunk_b > 0, "chunk sizes must be positive");
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => a
            .par_chunks_mut(chunk_a)
            .zip(b.par_chunks_mut(chunk_b))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y)),
        _ => a
            .chunks_mut(chunk_a)
            .zip(b.chunks_mut(chunk_b))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y)),
    }
}
