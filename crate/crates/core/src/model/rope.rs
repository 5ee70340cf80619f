use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

const ROPE_BASE: f64 = 10_000.0;

/// Cached rotation angles: coordinate pair `(2i, 2i+1)` at position `m` is
/// rotated by `m · base^(−2i/d_head)`.
#[derive(Debug, Clone)]
pub(crate) struct RopeTable<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RopeTable<T> {
    pub(crate) fn new(d_head: usize, max_pos: usize) -> Result<Self> {
        if !d_head.is_multiple_of(2) || d_head == 0 {
            return Err(Error::invalid(format!(
                "rotary embeddings need an even head width, got {d_head}"
            )));
        }
        let half = d_head / 2;
        let mut cos = Vec::with_capacity(max_pos * half);
        let mut sin = Vec::with_capacity(max_pos * half);
        for m in 0..max_pos {
            for i in 0..half {
                let theta = ROPE_BASE.powf(-2.0 * i as f64 / d_head as f64);
                let angle = m as f64 * theta;
                cos.push(T::from_f64_lossy(angle.cos()));
                sin.push(T::from_f64_lossy(angle.sin()));
            }
        }
        Ok(RopeTable { half, cos, sin })
    }

    /// Rotates one `d_head` slice at `pos`; `inverse` rotates backwards
    /// (the transpose, used by the backward pass).
    #[inline]
    pub(crate) fn rotate(&self, v: &mut [T], pos: usize, inverse: bool) {
        let base = pos * self.half;
        for i in 0..self.half {
            let (c, mut s) = (self.cos[base + i], self.sin[base + i]);
            if inverse {
                s = -s;
            }
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            v[2 * i] = a * c - b * s;
            v[2 * i + 1] = a * s + b * c;
        }
    }

    /// Rotates every head of a `[rows, d]` activation in place; row `r`
    /// sits at position `r % seq`.
    pub(crate) fn apply(&self, data: &mut [T], d: usize, seq: usize, inverse: bool) {
        let dh = 2 * self.half;
        for (r, row) in data.chunks_exact_mut(d).enumerate() {
            let pos = r % seq;
            for head in row.chunks_exact_mut(dh) {
                self.rotate(head, pos, inverse);
            }
        }
    }
}

/// Applies rotary position embedding to each row of `x[T × d_head]`, row
/// `t` at `positions[t]`.
pub fn rope_rotate<T: Scalar>(x: &Tensor<T>, positions: &[usize]) -> Result<Tensor<T>> {
    let dh = x.last_dim();
    if x.rows() != positions.len() {
        return Err(Error::shape(format!(
            "{} rows but {} positions",
            x.rows(),
            positions.len()
        )));
    }
    let max = positions.iter().copied().max().unwrap_or(0) + 1;
    let table = RopeTable::<T>::new(dh, max)?;
    let mut out = x.clone();
    for (row, &p) in out.data_mut().chunks_exact_mut(dh).zip(positions) {
        table.rotate(row, p, false);
    }
    Ok(out)
}
