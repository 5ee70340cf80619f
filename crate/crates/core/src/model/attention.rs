//! Causal multi-head attention kernels over `[batch·seq, d]` activations.
//! Work is split per (sequence, head) pair.

use crate::error::Result;
use crate::numerics::{for_each_chunk, for_each_chunk_pair, gemm, Exec, MatRef, Scalar};

pub(crate) struct Dims {
    pub batch: usize,
    pub seq: usize,
    pub d: usize,
    pub heads: usize,
}

impl Dims {
    fn dh(&self) -> usize {
        self.d / self.heads
    }

    fn head_view<'a, T: Scalar>(&self, m: &'a [T], pair: usize) -> Result<MatRef<'a, T>> {
        let (b, h) = (pair / self.heads, pair % self.heads);
        MatRef::new(
            &m[b * self.seq * self.d + h * self.dh()..],
            self.seq,
            self.dh(),
            self.d,
            1,
        )
    }

    /// Copies per-pair `[seq, dh]` blocks back into a `[batch·seq, d]` matrix.
    fn scatter<T: Scalar>(&self, blocks: &[T], stride: usize, offset: usize, out: &mut [T]) {
        let dh = self.dh();
        for pair in 0..self.batch * self.heads {
            let (b, h) = (pair / self.heads, pair % self.heads);
            let src = &blocks[pair * stride + offset..][..self.seq * dh];
            for t in 0..self.seq {
                let dst = (b * self.seq + t) * self.d + h * dh;
                out[dst..dst + dh].copy_from_slice(&src[t * dh..(t + 1) * dh]);
            }
        }
    }
}

/// Returns `(output, probs)`; `probs` holds the pre-dropout attention
/// weights, `[batch·heads, seq, seq]`, zero above the diagonal.
pub(crate) fn attention_forward<T: Scalar>(
    exec: Exec,
    dims: &Dims,
    q: &[T],
    k: &[T],
    v: &[T],
    drop_mask: Option<&[T]>,
) -> Result<(Vec<T>, Vec<T>)> {
    let (seq, dh) = (dims.seq, dims.dh());
    let pairs = dims.batch * dims.heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut probs = vec![T::zero(); pairs * seq * seq];
    let mut blocks = vec![T::zero(); pairs * seq * dh];
    let failed = std::sync::atomic::AtomicBool::new(false);
    for_each_chunk_pair(exec, &mut probs, seq * seq, &mut blocks, seq * dh, |pair, p, o| {
        let mut run = || -> Result<()> {
            let qv = dims.head_view(q, pair)?;
            let kv = dims.head_view(k, pair)?;
            let vv = dims.head_view(v, pair)?;
            gemm(Exec::Sequential, scale, qv, kv.t(), T::zero(), p)?;
            for (t, row) in p.chunks_exact_mut(seq).enumerate() {
                causal_softmax(row, t);
            }
            match drop_mask {
                Some(m) => {
                    let m = &m[pair * seq * seq..][..seq * seq];
                    let dropped: Vec<T> = p.iter().zip(m).map(|(&a, &b)| a * b).collect();
                    gemm(
                        Exec::Sequential,
                        T::one(),
                        MatRef::dense(&dropped, seq, seq)?,
                        vv,
                        T::zero(),
                        o,
                    )?;
                }
                None => gemm(
                    Exec::Sequential,
                    T::one(),
                    MatRef::dense(p, seq, seq)?,
                    vv,
                    T::zero(),
                    o,
                )?,
            }
            Ok(())
        };
        if run().is_err() {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
        }
    });
    if failed.into_inner() {
        return Err(crate::Error::shape("attention views do not fit the activations"));
    }
    let mut out = vec![T::zero(); dims.batch * seq * dims.d];
    dims.scatter(&blocks, seq * dh, 0, &mut out);
    Ok((out, probs))
}

fn causal_softmax<T: Scalar>(row: &mut [T], t: usize) {
    let (live, masked) = row.split_at_mut(t + 1);
    crate::numerics::ops::softmax_in_place(live);
    masked.iter_mut().for_each(|v| *v = T::zero());
}

/// Returns `(grad_q, grad_k, grad_v)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    exec: Exec,
    dims: &Dims,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    drop_mask: Option<&[T]>,
    go: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (seq, dh) = (dims.seq, dims.dh());
    let pairs = dims.batch * dims.heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let stride = 3 * seq * dh + seq * seq;
    let mut scratch = vec![T::zero(); pairs * stride];
    let failed = std::sync::atomic::AtomicBool::new(false);
    for_each_chunk(exec, &mut scratch, stride, |pair, chunk| {
        let mut run = || -> Result<()> {
            let (gq, rest) = chunk.split_at_mut(seq * dh);
            let (gk, rest) = rest.split_at_mut(seq * dh);
            let (gv, gs) = rest.split_at_mut(seq * dh);
            let p = &probs[pair * seq * seq..][..seq * seq];
            let mask = drop_mask.map(|m| &m[pair * seq * seq..][..seq * seq]);
            let qv = dims.head_view(q, pair)?;
            let kv = dims.head_view(k, pair)?;
            let vv = dims.head_view(v, pair)?;
            let gov = dims.head_view(go, pair)?;
            // gv = (p ∘ mask)ᵀ · go, staging the dropped weights in gs
            match mask {
                Some(m) => gs.iter_mut().zip(p.iter().zip(m)).for_each(|(g, (&a, &b))| *g = a * b),
                None => gs.copy_from_slice(p),
            }
            gemm(
                Exec::Sequential,
                T::one(),
                MatRef::dense(gs, seq, seq)?.t(),
                gov,
                T::zero(),
                gv,
            )?;
            gemm(Exec::Sequential, T::one(), gov, vv.t(), T::zero(), gs)?;
            if let Some(m) = mask {
                gs.iter_mut().zip(m).for_each(|(g, &b)| *g *= b);
            }
            for (t, (grow, prow)) in gs.chunks_exact_mut(seq).zip(p.chunks_exact(seq)).enumerate() {
                let dot: T = grow[..=t].iter().zip(&prow[..=t]).map(|(&g, &p)| g * p).sum();
                for j in 0..=t {
                    grow[j] = prow[j] * (grow[j] - dot);
                }
                grow[t + 1..].iter_mut().for_each(|g| *g = T::zero());
            }
            let gsv = MatRef::dense(gs, seq, seq)?;
            gemm(Exec::Sequential, scale, gsv, kv, T::zero(), gq)?;
            gemm(Exec::Sequential, scale, gsv.t(), qv, T::zero(), gk)?;
            Ok(())
        };
        if run().is_err() {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
        }
    });
    if failed.into_inner() {
        return Err(crate::Error::shape("attention views do not fit the activations"));
    }
    let n = dims.batch * seq * dims.d;
    let (mut gq, mut gk, mut gv) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    dims.scatter(&scratch, stride, 0, &mut gq);
    dims.scatter(&scratch, stride, seq * dh, &mut gk);
    dims.scatter(&scratch, stride, 2 * seq * dh, &mut gv);
    Ok((gq, gk, gv))
}
