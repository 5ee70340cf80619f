use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::{FastFoodGrads, FastFoodLayer, Structured, TransformCensus};

/// Fits square width-`w` FastFood operators to an `n → m` linear slot:
/// inputs are zero-padded to `w`, `ceil(m/w)` independent operators are
/// stacked, and the concatenated output is truncated to `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RectAdapter<T> {
    m: usize,
    n: usize,
    w: usize,
    pub stacks: Vec<FastFoodLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct RectGrads<T> {
    pub x: Tensor<T>,
    pub stacks: Vec<FastFoodGrads<T>>,
}

impl<T: Scalar> RectAdapter<T> {
    /// Inner width for an `n`-wide input.
    pub fn inner_width(n: usize) -> usize {
        n.next_power_of_two()
    }

    pub fn stack_count(m: usize, n: usize) -> usize {
        m.div_ceil(Self::inner_width(n))
    }

    pub fn new(m: usize, n: usize, stacks: Vec<FastFoodLayer<T>>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid(format!("adapter target {m}x{n} has an empty extent")));
        }
        let w = Self::inner_width(n);
        if stacks.len() != Self::stack_count(m, n) || stacks.iter().any(|s| s.width() != w) {
            return Err(Error::shape(format!(
                "{m}x{n} slot needs {} operators of width {w}",
                Self::stack_count(m, n)
            )));
        }
        Ok(RectAdapter { m, n, w, stacks })
    }

    pub fn with(m: usize, n: usize, mut make: impl FnMut(usize) -> Result<FastFoodLayer<T>>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid(format!("adapter target {m}x{n} has an empty extent")));
        }
        let w = Self::inner_width(n);
        let stacks = (0..Self::stack_count(m, n)).map(|_| make(w)).collect::<Result<_>>()?;
        Self::new(m, n, stacks)
    }

    pub fn out_dim(&self) -> usize {
        self.m
    }

    pub fn in_dim(&self) -> usize {
        self.n
    }

    pub fn inner(&self) -> usize {
        self.w
    }

    fn pad(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.last_dim() != self.n {
            return Err(Error::shape(format!(
                "adapter expects width {}, got {}",
                self.n,
                x.last_dim()
            )));
        }
        let rows = x.rows();
        let mut p = vec![T::zero(); rows * self.w];
        for (dst, src) in p.chunks_exact_mut(self.w).zip(x.data().chunks_exact(self.n)) {
            dst[..self.n].copy_from_slice(src);
        }
        Tensor::new(&[rows, self.w], p)
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let padded = self.pad(x)?;
        let rows = padded.rows();
        let mut y = vec![T::zero(); rows * self.m];
        for (s, op) in self.stacks.iter().enumerate() {
            let out = op.apply(&padded)?;
            let lo = s * self.w;
            let take = self.w.min(self.m - lo);
            for (dst, src) in y.chunks_exact_mut(self.m).zip(out.data().chunks_exact(self.w)) {
                dst[lo..lo + take].copy_from_slice(&src[..take]);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = self.m;
        Tensor::new(&shape, y)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<RectGrads<T>> {
        let padded = self.pad(x)?;
        if grad_out.last_dim() != self.m || grad_out.rows() != padded.rows() {
            return Err(Error::shape("adapter backward: grad_out does not match output"));
        }
        let rows = padded.rows();
        let mut gx = vec![T::zero(); rows * self.n];
        let mut stacks = Vec::with_capacity(self.stacks.len());
        for (s, op) in self.stacks.iter().enumerate() {
            let lo = s * self.w;
            let take = self.w.min(self.m - lo);
            let mut g = vec![T::zero(); rows * self.w];
            for (dst, src) in g.chunks_exact_mut(self.w).zip(grad_out.data().chunks_exact(self.m)) {
                dst[..take].copy_from_slice(&src[lo..lo + take]);
            }
            let grads = op.backward(&padded, &Tensor::new(&[rows, self.w], g)?)?;
            for (dst, src) in gx.chunks_exact_mut(self.n).zip(grads.x.data().chunks_exact(self.w)) {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            stacks.push(grads);
        }
        Ok(RectGrads {
            x: Tensor::new(x.shape(), gx)?,
            stacks,
        })
    }
}

impl<T: Scalar> Structured for RectAdapter<T> {
    fn census(&self) -> TransformCensus {
        let per: TransformCensus = self.stacks[0].census();
        let s = self.stacks.len() as u64;
        TransformCensus {
            trainable: s * per.trainable,
            frozen: 0,
            emulated: (self.m * self.n) as u64,
            flop_per_token: s * per.flop_per_token,
        }
    }
}
