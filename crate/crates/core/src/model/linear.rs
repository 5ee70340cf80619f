use crate::error::Result;
use crate::numerics::{gemm, Exec, MatRef, Scalar};
use crate::transforms::{block_diag_backward_slices, block_diag_forward_slices, ff_backward_rows, ff_forward_rows};

use super::param::{Init, Param, ParamSource, SpecSink};

/// Parametrization of one linear slot, before any arrays exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum LinearPlan {
    Dense {
        n_in: usize,
        n_out: usize,
        std: f64,
    },
    FastFood {
        n_in: usize,
        n_out: usize,
    },
    BlockDiag {
        n_in: usize,
        n_out: usize,
        blocks: usize,
        std: f64,
    },
}

impl LinearPlan {
    fn dims(&self) -> (usize, usize) {
        match *self {
            LinearPlan::Dense { n_in, n_out, .. }
            | LinearPlan::FastFood { n_in, n_out }
            | LinearPlan::BlockDiag { n_in, n_out, .. } => (n_in, n_out),
        }
    }

    pub(crate) fn specs(&self, prefix: &str, sink: &mut SpecSink<'_>) {
        let (n_in, n_out) = self.dims();
        match *self {
            LinearPlan::Dense { std, .. } => {
                sink.dense(
                    format!("{prefix}.weight"),
                    &[n_in, n_out],
                    Init::Normal { mean: 0.0, std },
                );
            }
            LinearPlan::FastFood { .. } => {
                let w = n_in.next_power_of_two();
                let diag = Init::Normal { mean: 1.0, std: 0.01 };
                for s in 0..n_out.div_ceil(w) {
                    for d in 1..=3 {
                        let emulated = if s == 0 && d == 1 { (n_in * n_out) as u64 } else { 0 };
                        sink.push(format!("{prefix}.ff{s}.d{d}"), &[w], diag, emulated);
                    }
                }
            }
            LinearPlan::BlockDiag { blocks, std, .. } => {
                sink.push(
                    format!("{prefix}.blocks"),
                    &[blocks, n_in / blocks, n_out / blocks],
                    Init::Normal { mean: 0.0, std },
                    (n_in * n_out) as u64,
                );
            }
        }
        sink.dense(format!("{prefix}.bias"), &[n_out], Init::Zeros);
    }

    pub(crate) fn build<T: Scalar>(&self, prefix: &str, src: &mut ParamSource<T>) -> Linear<T> {
        let (n_in, n_out) = self.dims();
        let op = match *self {
            LinearPlan::Dense { .. } => LinearOp::Dense {
                w: src.take(&format!("{prefix}.weight")),
            },
            LinearPlan::FastFood { .. } => {
                let w = n_in.next_power_of_two();
                let stacks = (0..n_out.div_ceil(w))
                    .map(|s| [1, 2, 3].map(|d| src.take(&format!("{prefix}.ff{s}.d{d}"))))
                    .collect();
                LinearOp::FastFood { w, stacks }
            }
            LinearPlan::BlockDiag { blocks, .. } => LinearOp::BlockDiag {
                b: blocks,
                blocks: src.take(&format!("{prefix}.blocks")),
            },
        };
        Linear {
            n_in,
            n_out,
            op,
            bias: src.take(&format!("{prefix}.bias")),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum LinearOp<T> {
    /// `[n_in, n_out]` weight, `y = x·W`.
    Dense {
        w: Param<T>,
    },
    /// Rectangular adapter around width-`w` FastFood operators.
    FastFood {
        w: usize,
        stacks: Vec<[Param<T>; 3]>,
    },
    BlockDiag {
        b: usize,
        blocks: Param<T>,
    },
}

/// Linear slot `n_in → n_out` with bias.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub(crate) n_in: usize,
    pub(crate) n_out: usize,
    pub(crate) op: LinearOp<T>,
    pub(crate) bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub(crate) fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        match &self.op {
            LinearOp::Dense { w } => out.push(w),
            LinearOp::FastFood { stacks, .. } => stacks.iter().for_each(|s| out.extend(s.iter())),
            LinearOp::BlockDiag { blocks, .. } => out.push(blocks),
        }
        out.push(&self.bias);
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        match &mut self.op {
            LinearOp::Dense { w } => out.push(w),
            LinearOp::FastFood { stacks, .. } => stacks.iter_mut().for_each(|s| out.extend(s.iter_mut())),
            LinearOp::BlockDiag { blocks, .. } => out.push(blocks),
        }
        out.push(&mut self.bias);
    }

    /// `x` is `rows × n_in`; returns `rows × n_out`.
    pub(crate) fn forward(&self, exec: Exec, x: &[T]) -> Result<Vec<T>> {
        let rows = x.len() / self.n_in;
        let (n_in, n_out) = (self.n_in, self.n_out);
        let mut y = vec![T::zero(); rows * n_out];
        match &self.op {
            LinearOp::Dense { w } => {
                gemm(
                    exec,
                    T::one(),
                    MatRef::dense(x, rows, n_in)?,
                    MatRef::dense(w.data(), n_in, n_out)?,
                    T::zero(),
                    &mut y,
                )?;
            }
            LinearOp::FastFood { w, stacks } => {
                let w = *w;
                let padded = pad_cols(x, n_in, w);
                let mut buf = vec![T::zero(); rows * w];
                for (s, d) in stacks.iter().enumerate() {
                    ff_forward_rows(exec, [d[0].data(), d[1].data(), d[2].data()], &padded, &mut buf);
                    let lo = s * w;
                    let take = w.min(n_out - lo);
                    for (dst, src) in y.chunks_exact_mut(n_out).zip(buf.chunks_exact(w)) {
                        dst[lo..lo + take].copy_from_slice(&src[..take]);
                    }
                }
            }
            LinearOp::BlockDiag { b, blocks } => {
                block_diag_forward_slices(exec, blocks.data(), *b, n_in, n_out, x, &mut y)?;
            }
        }
        let bias = self.bias.data();
        for row in y.chunks_exact_mut(n_out) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Returns the input gradient; accumulates parameter gradients for
    /// trainable arrays.
    pub(crate) fn backward(&mut self, exec: Exec, x: &[T], gy: &[T]) -> Result<Vec<T>> {
        let (n_in, n_out) = (self.n_in, self.n_out);
        let rows = x.len() / n_in;
        if let Some(gb) = self.bias.grad.as_mut() {
            let gb = gb.data_mut();
            for row in gy.chunks_exact(n_out) {
                for (g, &v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut gx = vec![T::zero(); rows * n_in];
        match &mut self.op {
            LinearOp::Dense { w } => {
                let g = MatRef::dense(gy, rows, n_out)?;
                let (wv, wg) = w.split();
                gemm(
                    exec,
                    T::one(),
                    g,
                    MatRef::dense(wv, n_in, n_out)?.t(),
                    T::zero(),
                    &mut gx,
                )?;
                if let Some(wg) = wg {
                    gemm(exec, T::one(), MatRef::dense(x, rows, n_in)?.t(), g, T::one(), wg)?;
                }
            }
            LinearOp::FastFood { w, stacks } => {
                let w = *w;
                let padded = pad_cols(x, n_in, w);
                let mut gpad = vec![T::zero(); rows * w];
                let mut gys = vec![T::zero(); rows * w];
                let mut gtmp = vec![T::zero(); rows * w];
                let mut scratch = vec![T::zero(); 3 * w];
                for (s, d) in stacks.iter_mut().enumerate() {
                    let lo = s * w;
                    let take = w.min(n_out - lo);
                    for (dst, src) in gys.chunks_exact_mut(w).zip(gy.chunks_exact(n_out)) {
                        dst[..take].copy_from_slice(&src[lo..lo + take]);
                        dst[take..].fill(T::zero());
                    }
                    let [p1, p2, p3] = d;
                    let vals = [p1.value.data(), p2.value.data(), p3.value.data()];
                    match (p1.grad.as_mut(), p2.grad.as_mut(), p3.grad.as_mut()) {
                        (Some(g1), Some(g2), Some(g3)) => ff_backward_rows(
                            exec,
                            vals,
                            &padded,
                            &gys,
                            &mut gtmp,
                            [g1.data_mut(), g2.data_mut(), g3.data_mut()],
                        ),
                        _ => {
                            let (a, rest) = scratch.split_at_mut(w);
                            let (b, c) = rest.split_at_mut(w);
                            ff_backward_rows(exec, vals, &padded, &gys, &mut gtmp, [a, b, c]);
                        }
                    }
                    for (g, &t) in gpad.iter_mut().zip(&gtmp) {
                        *g += t;
                    }
                }
                for (dst, src) in gx.chunks_exact_mut(n_in).zip(gpad.chunks_exact(w)) {
                    dst.copy_from_slice(&src[..n_in]);
                }
            }
            LinearOp::BlockDiag { b, blocks } => {
                let b = *b;
                let mut scratch;
                let (bv, bg) = blocks.split();
                let gw: &mut [T] = match bg {
                    Some(g) => g,
                    None => {
                        scratch = vec![T::zero(); bv.len()];
                        &mut scratch
                    }
                };
                block_diag_backward_slices(exec, bv, b, n_in, n_out, x, gy, &mut gx, gw)?;
            }
        }
        Ok(gx)
    }
}

fn pad_cols<T: Scalar>(x: &[T], n: usize, w: usize) -> std::borrow::Cow<'_, [T]> {
    if n == w {
        return std::borrow::Cow::Borrowed(x);
    }
    let rows = x.len() / n;
    let mut p = vec![T::zero(); rows * w];
    for (dst, src) in p.chunks_exact_mut(w).zip(x.chunks_exact(n)) {
        dst[..n].copy_from_slice(src);
    }
    std::borrow::Cow::Owned(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::param::{materialize, ParamSpec};
    use crate::numerics::{finite_diff_check, Tensor};

    fn build(plan: LinearPlan, seed: u64) -> Linear<f64> {
        let mut specs: Vec<ParamSpec> = Vec::new();
        plan.specs(
            "lin",
            &mut SpecSink {
                out: &mut specs,
                trainable: true,
                stream: "s".into(),
            },
        );
        let mut src = ParamSource::new(materialize::<f64>(&specs, seed));
        let l = plan.build("lin", &mut src);
        src.finish();
        l
    }

    fn inputs(rows: usize, n: usize) -> Vec<f64> {
        (0..rows * n).map(|i| ((i * 7919) % 97) as f64 / 48.0 - 1.0).collect()
    }

    #[test]
    fn unit_fastfood_matches_identity_dense() {
        let d = 16;
        let mut ff = build(LinearPlan::FastFood { n_in: d, n_out: d }, 1);
        if let LinearOp::FastFood { stacks, .. } = &mut ff.op {
            for p in stacks.iter_mut().flatten() {
                p.value = Tensor::full(&[d], 1.0);
            }
        }
        let mut dense = build(
            LinearPlan::Dense {
                n_in: d,
                n_out: d,
                std: 0.02,
            },
            1,
        );
        if let LinearOp::Dense { w } = &mut dense.op {
            w.value = Tensor::identity(d);
        }
        let x = inputs(5, d);
        let a = ff.forward(Exec::Sequential, &x).unwrap();
        let b = dense.forward(Exec::Sequential, &x).unwrap();
        let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10, "{diff}");
    }

    fn check_grads(plan: LinearPlan, n_in: usize, n_out: usize) {
        let mut lin = build(plan, 3);
        let rows = 3;
        let x = inputs(rows, n_in);
        let w: Vec<f64> = (0..rows * n_out).map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0).collect();
        let obj = |l: &Linear<f64>, x: &[f64]| -> f64 {
            l.forward(Exec::Sequential, x)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let gx = lin.backward(Exec::Sequential, &x, &w).unwrap();
        let e = finite_diff_check(|p| obj(&lin, p), &x, &gx, 1e-3).unwrap();
        assert!(e <= 1e-4, "input grad {n_in}->{n_out}: {e}");
        let n_params = {
            let mut v = Vec::new();
            lin.params(&mut v);
            v.len()
        };
        for i in 0..n_params {
            let (point, analytic) = {
                let mut v = Vec::new();
                lin.params(&mut v);
                (v[i].data().to_vec(), v[i].grad.as_ref().unwrap().data().to_vec())
            };
            let f = |p: &[f64]| {
                let mut l = lin.clone();
                let mut v = Vec::new();
                l.params_mut(&mut v);
                v[i].value.data_mut().copy_from_slice(p);
                obj(&l, &x)
            };
            let err = finite_diff_check(f, &point, &analytic, 1e-3).unwrap();
            assert!(err <= 1e-4, "param {i}: {err}");
        }
    }

    #[test]
    fn dense_gradients() {
        check_grads(
            LinearPlan::Dense {
                n_in: 5,
                n_out: 3,
                std: 0.5,
            },
            5,
            3,
        );
    }

    #[test]
    fn fastfood_gradients_rectangular() {
        check_grads(LinearPlan::FastFood { n_in: 3, n_out: 10 }, 3, 10);
        check_grads(LinearPlan::FastFood { n_in: 12, n_out: 4 }, 12, 4);
    }

    #[test]
    fn block_gradients() {
        check_grads(
            LinearPlan::BlockDiag {
                n_in: 8,
                n_out: 12,
                blocks: 4,
                std: 0.5,
            },
            8,
            12,
        );
    }
}
