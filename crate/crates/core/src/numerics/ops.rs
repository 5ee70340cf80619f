use crate::error::{Error, Result};

use super::{c, gemm, Exec, MatRef, Scalar, Tensor};

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!("matmul inner extents differ: {m}x{k} * {k2}x{n}")));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        Exec::auto(),
        T::one(),
        MatRef::dense(a.data(), m, k)?,
        MatRef::dense(b.data(), k, n)?,
        T::zero(),
        &mut out,
    )?;
    Tensor::new(&[m, n], out)
}

/// Gradients of `a · b` given the output cotangent:
/// `(grad_out · bᵀ, aᵀ · grad_out)`.
pub fn matmul_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    let (gm, gn) = grad_out.dims2()?;
    if k != k2 || gm != m || gn != n {
        return Err(Error::shape(format!(
            "matmul_backward: a {m}x{k}, b {k2}x{n}, grad_out {gm}x{gn}"
        )));
    }
    let g = MatRef::dense(grad_out.data(), m, n)?;
    let av = MatRef::dense(a.data(), m, k)?;
    let bv = MatRef::dense(b.data(), k, n)?;
    let mut ga = vec![T::zero(); m * k];
    let mut gb = vec![T::zero(); k * n];
    gemm(Exec::auto(), T::one(), g, bv.t(), T::zero(), &mut ga)?;
    gemm(Exec::auto(), T::one(), av.t(), g, T::zero(), &mut gb)?;
    Ok((Tensor::new(&[m, k], ga)?, Tensor::new(&[k, n], gb)?))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax input contains NaN".into()));
    }
    let mut out = x.clone();
    let n = out.last_dim();
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Per-row statistics kept from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
    pub dim: usize,
}

impl<T: Scalar> LayerNormCache<T> {
    pub(crate) fn with_rows(rows: usize, dim: usize) -> Self {
        LayerNormCache {
            xhat: vec![T::zero(); rows * dim],
            rstd: vec![T::zero(); rows],
            dim,
        }
    }
}

/// Normalizes each row over the last axis, then applies `gamma`/`beta`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.last_dim();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(format!(
            "layer_norm over width {d} with gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    let mut y = vec![T::zero(); x.len()];
    let mut cache = LayerNormCache::with_rows(x.rows(), d);
    ln_forward(x.data(), gamma.data(), beta.data(), eps, &mut y, &mut cache);
    Ok((Tensor::new(x.shape(), y)?, cache))
}

pub(crate) fn ln_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: f64,
    y: &mut [T],
    cache: &mut LayerNormCache<T>,
) {
    let d = gamma.len();
    let inv_d = c::<T>(1.0 / d as f64);
    let eps = c::<T>(eps);
    for (r, ((xr, yr), hr)) in x
        .chunks(d)
        .zip(y.chunks_mut(d))
        .zip(cache.xhat.chunks_mut(d))
        .enumerate()
    {
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rstd = (var + eps).sqrt().recip();
        cache.rstd[r] = rstd;
        for j in 0..d {
            let h = (xr[j] - mean) * rstd;
            hr[j] = h;
            yr[j] = h * gamma[j] + beta[j];
        }
    }
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn layer_norm_backward<T: Scalar>(
    grad_y: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &LayerNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = cache.dim;
    if grad_y.len() != cache.xhat.len() || gamma.len() != d {
        return Err(Error::shape("layer_norm_backward: inconsistent shapes"));
    }
    let mut gx = vec![T::zero(); grad_y.len()];
    let mut gg = vec![T::zero(); d];
    let mut gb = vec![T::zero(); d];
    ln_backward(grad_y.data(), gamma.data(), cache, &mut gx, &mut gg, &mut gb);
    Ok((
        Tensor::new(grad_y.shape(), gx)?,
        Tensor::new(&[d], gg)?,
        Tensor::new(&[d], gb)?,
    ))
}

/// Writes the input gradient into `gx` and accumulates parameter gradients
/// into `ggamma` / `gbeta` (when given).
pub(crate) fn ln_backward<T: Scalar>(
    gy: &[T],
    gamma: &[T],
    cache: &LayerNormCache<T>,
    gx: &mut [T],
    ggamma: &mut [T],
    gbeta: &mut [T],
) {
    let d = cache.dim;
    let inv_d = c::<T>(1.0 / d as f64);
    for (r, ((gyr, hr), gxr)) in gy.chunks(d).zip(cache.xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
        let mut sum_g = T::zero();
        let mut sum_gh = T::zero();
        for j in 0..d {
            let g = gyr[j] * gamma[j];
            sum_g += g;
            sum_gh += g * hr[j];
        }
        let mean_g = sum_g * inv_d;
        let mean_gh = sum_gh * inv_d;
        let rstd = cache.rstd[r];
        for j in 0..d {
            let g = gyr[j] * gamma[j];
            gxr[j] = rstd * (g - mean_g - hr[j] * mean_gh);
        }
        if !ggamma.is_empty() {
            for j in 0..d {
                ggamma[j] += gyr[j] * hr[j];
                gbeta[j] += gyr[j];
            }
        }
    }
}

/// Mean negative log-likelihood (nats/token) of `targets` under row-wise
/// softmax of `logits[T×V]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<f64> {
    check_targets(logits, targets)?;
    Ok(ce_kernel(logits.data(), logits.last_dim(), targets, None))
}

/// Gradient of [`cross_entropy`]: `(softmax − onehot) / T`.
pub fn cross_entropy_backward<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<Tensor<T>> {
    check_targets(logits, targets)?;
    let mut g = vec![T::zero(); logits.len()];
    ce_kernel(logits.data(), logits.last_dim(), targets, Some(&mut g));
    Tensor::new(logits.shape(), g)
}

fn check_targets<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<()> {
    let v = logits.last_dim();
    if logits.rows() != targets.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::invalid(format!("target {bad} outside vocabulary of {v}")));
    }
    Ok(())
}

/// Loss accumulated in f64; optional gradient scaled by `1/rows`.
pub(crate) fn ce_kernel<T: Scalar>(logits: &[T], v: usize, targets: &[usize], mut grad: Option<&mut [T]>) -> f64 {
    let rows = targets.len();
    let inv_rows = c::<T>(1.0 / rows as f64);
    let mut total = 0.0f64;
    for (r, row) in logits.chunks(v).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += (lse - row[targets[r]]).as_f64();
        if let Some(g) = grad.as_deref_mut() {
            let gr = &mut g[r * v..(r + 1) * v];
            let inv_sum = sum.recip();
            for j in 0..v {
                gr[j] = (row[j] - max).exp() * inv_sum * inv_rows;
            }
            gr[targets[r]] -= inv_rows;
        }
    }
    total / rows as f64
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through one `exp`; saturates correctly at both ends and is
/// several times cheaper than the library routine.
#[inline]
fn fast_tanh<T: Scalar>(u: T) -> T {
    let two = c::<T>(2.0);
    T::one() - two / ((two * u).exp() + T::one())
}

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = c::<T>(GELU_K);
    let a = c::<T>(GELU_A);
    let half = c::<T>(0.5);
    half * x * (T::one() + fast_tanh(k * (x + a * x * x * x)))
}

/// d gelu / dx.
pub fn gelu_backward<T: Scalar>(x: T) -> T {
    let k = c::<T>(GELU_K);
    let a = c::<T>(GELU_A);
    let half = c::<T>(0.5);
    let t = fast_tanh(k * (x + a * x * x * x));
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + c::<T>(3.0) * a * x * x)
}
