use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{for_each_chunk, for_each_chunk_pair, Exec, Scalar, Tensor};

use super::fwht::fwht_in_place;
use super::{check_pow2, Structured, TransformCensus};

const ROW_BLOCK: usize = 32;

/// Adaptive FastFood operator `D3 · H · D2 · H · D1` on width `n`, with each
/// Hadamard stage scaled by `1/√n`. Only the three diagonals are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct FastFoodLayer<T> {
    n: usize,
    pub d1: Tensor<T>,
    pub d2: Tensor<T>,
    pub d3: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct FastFoodGrads<T> {
    pub x: Tensor<T>,
    pub d1: Tensor<T>,
    pub d2: Tensor<T>,
    pub d3: Tensor<T>,
}

impl<T: Scalar> FastFoodLayer<T> {
    pub fn new(d1: Tensor<T>, d2: Tensor<T>, d3: Tensor<T>) -> Result<Self> {
        let n = d1.len();
        check_pow2(n, "FastFood width")?;
        if d1.rank() != 1 || d2.shape() != d1.shape() || d3.shape() != d1.shape() {
            return Err(Error::shape("FastFood diagonals must be three vectors of equal length"));
        }
        Ok(FastFoodLayer { n, d1, d2, d3 })
    }

    /// Unit diagonals: the operator is the identity.
    pub fn identity(n: usize) -> Result<Self> {
        let one = || Tensor::full(&[n.max(1)], T::one());
        Self::new(one(), one(), one())
    }

    /// Diagonals drawn from `N(1, 0.01²)`.
    pub fn init(n: usize, rng: &mut impl Rng) -> Result<Self> {
        check_pow2(n, "FastFood width")?;
        let dist = Normal::new(1.0, 0.01).expect("valid normal");
        let mut draw = || Tensor::from_f64(&[n], &dist.sample_iter(&mut *rng).take(n).collect::<Vec<_>>());
        Self::new(draw()?, draw()?, draw()?)
    }

    pub fn width(&self) -> usize {
        self.n
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.last_dim() != self.n {
            return Err(Error::shape(format!(
                "FastFood of width {} applied to rows of width {}",
                self.n,
                x.last_dim()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut y = vec![T::zero(); x.len()];
        ff_forward_rows(
            Exec::auto(),
            [self.d1.data(), self.d2.data(), self.d3.data()],
            x.data(),
            &mut y,
        );
        Tensor::new(x.shape(), y)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<FastFoodGrads<T>> {
        self.check_input(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::shape("FastFood grad_out must match the input shape"));
        }
        let n = self.n;
        let mut gx = vec![T::zero(); x.len()];
        let mut gd = vec![T::zero(); 3 * n];
        let (g1, rest) = gd.split_at_mut(n);
        let (g2, g3) = rest.split_at_mut(n);
        ff_backward_rows(
            Exec::auto(),
            [self.d1.data(), self.d2.data(), self.d3.data()],
            x.data(),
            grad_out.data(),
            &mut gx,
            [g1, g2, g3],
        );
        Ok(FastFoodGrads {
            x: Tensor::new(x.shape(), gx)?,
            d1: Tensor::new(&[n], g1.to_vec())?,
            d2: Tensor::new(&[n], g2.to_vec())?,
            d3: Tensor::new(&[n], g3.to_vec())?,
        })
    }
}

impl<T: Scalar> Structured for FastFoodLayer<T> {
    fn census(&self) -> TransformCensus {
        let n = self.n as u64;
        TransformCensus {
            trainable: 3 * n,
            frozen: 0,
            emulated: n * n,
            flop_per_token: 3 * n,
        }
    }
}

/// `y = D3 H D2 H D1 x` for each `n`-wide row, normalized Hadamards.
pub(crate) fn ff_forward_rows<T: Scalar>(exec: Exec, d: [&[T]; 3], x: &[T], y: &mut [T]) {
    let n = d[0].len();
    let scale = T::from_f64_lossy(1.0 / (n as f64).sqrt());
    for_each_chunk(exec, y, ROW_BLOCK * n, |blk, yc| {
        let xc = &x[blk * ROW_BLOCK * n..][..yc.len()];
        for (yr, xr) in yc.chunks_exact_mut(n).zip(xc.chunks_exact(n)) {
            for j in 0..n {
                yr[j] = d[0][j] * xr[j];
            }
            fwht_in_place(yr);
            for j in 0..n {
                yr[j] *= d[1][j] * scale;
            }
            fwht_in_place(yr);
            for j in 0..n {
                yr[j] *= d[2][j] * scale;
            }
        }
    });
}

/// Writes input gradients into `gx` and accumulates diagonal gradients into
/// `gd`. Forward intermediates are recomputed from `x`.
pub(crate) fn ff_backward_rows<T: Scalar>(
    exec: Exec,
    d: [&[T]; 3],
    x: &[T],
    gy: &[T],
    gx: &mut [T],
    gd: [&mut [T]; 3],
) {
    let n = d[0].len();
    let rows = x.len() / n;
    let blocks = rows.div_ceil(ROW_BLOCK);
    let scale = T::from_f64_lossy(1.0 / (n as f64).sqrt());
    let mut partial = vec![T::zero(); blocks * 3 * n];
    for_each_chunk_pair(exec, gx, ROW_BLOCK * n, &mut partial, 3 * n, |blk, gxc, part| {
        let off = blk * ROW_BLOCK * n;
        let xc = &x[off..][..gxc.len()];
        let gyc = &gy[off..][..gxc.len()];
        let (p1, rest) = part.split_at_mut(n);
        let (p2, p3) = rest.split_at_mut(n);
        let mut u2 = vec![T::zero(); n];
        let mut u4 = vec![T::zero(); n];
        for ((xr, gyr), gxr) in xc.chunks_exact(n).zip(gyc.chunks_exact(n)).zip(gxc.chunks_exact_mut(n)) {
            for j in 0..n {
                u2[j] = d[0][j] * xr[j];
            }
            fwht_in_place(&mut u2);
            for j in 0..n {
                u2[j] *= scale;
                u4[j] = d[1][j] * u2[j];
            }
            fwht_in_place(&mut u4);
            // g holds the running cotangent, reusing gxr as scratch
            for j in 0..n {
                u4[j] *= scale;
                p3[j] += gyr[j] * u4[j];
                gxr[j] = d[2][j] * gyr[j];
            }
            fwht_in_place(gxr);
            for j in 0..n {
                gxr[j] *= scale;
                p2[j] += gxr[j] * u2[j];
                gxr[j] *= d[1][j];
            }
            fwht_in_place(gxr);
            for j in 0..n {
                gxr[j] *= scale;
                p1[j] += gxr[j] * xr[j];
                gxr[j] *= d[0][j];
            }
        }
    });
    let [g1, g2, g3] = gd;
    for part in partial.chunks_exact(3 * n) {
        for j in 0..n {
            g1[j] += part[j];
            g2[j] += part[n + j];
            g3[j] += part[2 * n + j];
        }
    }
}
