use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{for_each_chunk, gemm_ld, Exec, MatRef, Scalar, Tensor};

use super::{check_pow2, Structured, TransformCensus};

/// Block-diagonal linear map `n_in → n_out` made of `b` dense blocks of
/// shape `(n_in/b) × (n_out/b)`, stored as one `[b, n_in/b, n_out/b]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagLayer<T> {
    n_in: usize,
    n_out: usize,
    b: usize,
    pub blocks: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BlockDiagGrads<T> {
    pub x: Tensor<T>,
    pub blocks: Tensor<T>,
}

impl<T: Scalar> BlockDiagLayer<T> {
    pub fn new(n_in: usize, n_out: usize, b: usize, blocks: Tensor<T>) -> Result<Self> {
        check_block_split(n_in, n_out, b)?;
        if blocks.shape() != [b, n_in / b, n_out / b] {
            return Err(Error::shape(format!(
                "expected blocks of shape [{b}, {}, {}], got {:?}",
                n_in / b,
                n_out / b,
                blocks.shape()
            )));
        }
        Ok(BlockDiagLayer { n_in, n_out, b, blocks })
    }

    /// Entries drawn from `N(0, std²)`.
    pub fn init(n_in: usize, n_out: usize, b: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        check_block_split(n_in, n_out, b)?;
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let len = n_in * n_out / b;
        let vals: Vec<f64> = dist.sample_iter(rng).take(len).collect();
        Self::new(n_in, n_out, b, Tensor::from_f64(&[b, n_in / b, n_out / b], &vals)?)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn block_count(&self) -> usize {
        self.b
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.last_dim() != self.n_in {
            return Err(Error::shape(format!(
                "block-diagonal layer expects width {}, got {}",
                self.n_in,
                x.last_dim()
            )));
        }
        let rows = x.rows();
        let mut y = vec![T::zero(); rows * self.n_out];
        block_diag_forward_slices(
            Exec::auto(),
            self.blocks.data(),
            self.b,
            self.n_in,
            self.n_out,
            x.data(),
            &mut y,
        )?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = self.n_out;
        Tensor::new(&shape, y)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<BlockDiagGrads<T>> {
        if x.last_dim() != self.n_in || grad_out.last_dim() != self.n_out || x.rows() != grad_out.rows() {
            return Err(Error::shape("block-diagonal backward: inconsistent shapes"));
        }
        let mut gx = vec![T::zero(); x.len()];
        let mut gw = vec![T::zero(); self.blocks.len()];
        block_diag_backward_slices(
            Exec::auto(),
            self.blocks.data(),
            self.b,
            self.n_in,
            self.n_out,
            x.data(),
            grad_out.data(),
            &mut gx,
            &mut gw,
        )?;
        Ok(BlockDiagGrads {
            x: Tensor::new(x.shape(), gx)?,
            blocks: Tensor::new(self.blocks.shape(), gw)?,
        })
    }
}

impl<T: Scalar> Structured for BlockDiagLayer<T> {
    fn census(&self) -> TransformCensus {
        let (i, o, b) = (self.n_in as u64, self.n_out as u64, self.b as u64);
        TransformCensus {
            trainable: i * o / b,
            frozen: 0,
            emulated: i * o,
            flop_per_token: i * o / b,
        }
    }
}

fn check_block_split(n_in: usize, n_out: usize, b: usize) -> Result<()> {
    if b == 0 || n_in == 0 || n_out == 0 || !n_in.is_multiple_of(b) || !n_out.is_multiple_of(b) {
        return Err(Error::invalid(format!(
            "{b} blocks cannot split widths {n_in} -> {n_out}"
        )));
    }
    Ok(())
}

pub(crate) fn block_diag_forward_slices<T: Scalar>(
    exec: Exec,
    blocks: &[T],
    b: usize,
    n_in: usize,
    n_out: usize,
    x: &[T],
    y: &mut [T],
) -> Result<()> {
    let (bi, bo) = (n_in / b, n_out / b);
    let rows = x.len() / n_in;
    for i in 0..b {
        let xi = MatRef::new(&x[i * bi..], rows, bi, n_in, 1)?;
        let wi = MatRef::dense(&blocks[i * bi * bo..(i + 1) * bi * bo], bi, bo)?;
        gemm_ld(exec, T::one(), xi, wi, T::zero(), &mut y[i * bo..], n_out)?;
    }
    Ok(())
}

/// Overwrites `gx`; accumulates into `gw`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn block_diag_backward_slices<T: Scalar>(
    exec: Exec,
    blocks: &[T],
    b: usize,
    n_in: usize,
    n_out: usize,
    x: &[T],
    gy: &[T],
    gx: &mut [T],
    gw: &mut [T],
) -> Result<()> {
    let (bi, bo) = (n_in / b, n_out / b);
    let rows = x.len() / n_in;
    for i in 0..b {
        let wi = MatRef::dense(&blocks[i * bi * bo..(i + 1) * bi * bo], bi, bo)?;
        let gyi = MatRef::new(&gy[i * bo..], rows, bo, n_out, 1)?;
        let xi = MatRef::new(&x[i * bi..], rows, bi, n_in, 1)?;
        gemm_ld(exec, T::one(), gyi, wi.t(), T::zero(), &mut gx[i * bi..], n_in)?;
        gemm_ld(
            exec,
            T::one(),
            xi.t(),
            gyi,
            T::one(),
            &mut gw[i * bi * bo..(i + 1) * bi * bo],
            bo,
        )?;
    }
    Ok(())
}

/// Parameter-free mixing across blocks: `(H_b ⊗ I_k) / √b` on rows of
/// width `n = b·k`, where block `i` is coordinates `i·k .. (i+1)·k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHadamard {
    b: usize,
    k: usize,
}

impl BlockHadamard {
    pub fn new(b: usize, k: usize) -> Result<Self> {
        check_pow2(b, "block-Hadamard block count")?;
        if k == 0 {
            return Err(Error::invalid("block-Hadamard block size must be positive"));
        }
        Ok(BlockHadamard { b, k })
    }

    /// Splits width `n` into `b` blocks.
    pub fn for_width(n: usize, b: usize) -> Result<Self> {
        if b == 0 || !n.is_multiple_of(b) {
            return Err(Error::invalid(format!("width {n} is not divisible into {b} blocks")));
        }
        Self::new(b, n / b)
    }

    pub fn width(&self) -> usize {
        self.b * self.k
    }

    pub fn block_count(&self) -> usize {
        self.b
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.last_dim() != self.width() {
            return Err(Error::shape(format!(
                "block-Hadamard of width {} applied to width {}",
                self.width(),
                x.last_dim()
            )));
        }
        let mut out = x.clone();
        self.apply_rows(Exec::auto(), out.data_mut());
        Ok(out)
    }

    /// The operator is symmetric and orthogonal, so its backward pass is
    /// itself.
    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(grad_out)
    }

    pub(crate) fn apply_rows<T: Scalar>(&self, exec: Exec, data: &mut [T]) {
        let (b, k) = (self.b, self.k);
        let n = b * k;
        let scale = T::from_f64_lossy(1.0 / (b as f64).sqrt());
        let rows_per_task = (4096 / n).max(1);
        for_each_chunk(exec, data, rows_per_task * n, |_, chunk| {
            for row in chunk.chunks_exact_mut(n) {
                let mut h = k;
                while h < n {
                    for pair in row.chunks_exact_mut(2 * h) {
                        let (lo, hi) = pair.split_at_mut(h);
                        for (a, c) in lo.iter_mut().zip(hi.iter_mut()) {
                            let (u, v) = (*a, *c);
                            *a = u + v;
                            *c = u - v;
                        }
                    }
                    h *= 2;
                }
                if b > 1 {
                    row.iter_mut().for_each(|v| *v *= scale);
                }
            }
        });
    }
}

impl Structured for BlockHadamard {
    fn census(&self) -> TransformCensus {
        TransformCensus::default()
    }
}
