use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::ops::{ln_backward, ln_forward};
use crate::numerics::{gelu, gelu_backward, Exec, LayerNormCache, Scalar};
use crate::transforms::BlockHadamard;

use super::attention::{attention_backward, attention_forward, Dims};
use super::linear::{Linear, LinearPlan};
use super::param::{Init, Param, ParamSource, SpecSink};
use super::rope::RopeTable;

pub const LN_EPS: f64 = 1e-5;

/// Per-call state shared by every layer of one forward pass.
pub(crate) struct Ctx<'a, T> {
    pub exec: Exec,
    pub batch: usize,
    pub seq: usize,
    pub rope: &'a RopeTable<T>,
    /// Present only in training mode; drives dropout masks.
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub dropout: f64,
    pub attn_dropout: f64,
}

impl<T: Scalar> Ctx<'_, T> {
    /// Inverted-dropout mask (`0` or `1/(1−p)`), or `None` when inactive.
    pub(crate) fn mask(&mut self, len: usize, p: f64) -> Option<Vec<T>> {
        let rng = self.rng.as_deref_mut()?;
        if p <= 0.0 {
            return None;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        Some(
            (0..len)
                .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                .collect(),
        )
    }
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub(crate) gamma: Param<T>,
    pub(crate) beta: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub(crate) fn specs(prefix: &str, d: usize, sink: &mut SpecSink<'_>) {
        sink.dense(format!("{prefix}.gamma"), &[d], Init::Ones);
        sink.dense(format!("{prefix}.beta"), &[d], Init::Zeros);
    }

    pub(crate) fn build(prefix: &str, src: &mut ParamSource<T>) -> Self {
        LayerNorm {
            gamma: src.take(&format!("{prefix}.gamma")),
            beta: src.take(&format!("{prefix}.beta")),
        }
    }

    pub(crate) fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }

    pub(crate) fn forward(&self, x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.gamma.len();
        let mut y = vec![T::zero(); x.len()];
        let mut cache = LayerNormCache::with_rows(x.len() / d, d);
        ln_forward(x, self.gamma.data(), self.beta.data(), LN_EPS, &mut y, &mut cache);
        (y, cache)
    }

    pub(crate) fn backward(&mut self, gy: &[T], cache: &LayerNormCache<T>) -> Vec<T> {
        let mut gx = vec![T::zero(); gy.len()];
        let gamma = self.gamma.value.data();
        match (self.gamma.grad.as_mut(), self.beta.grad.as_mut()) {
            (Some(gg), Some(gb)) => ln_backward(gy, gamma, cache, &mut gx, gg.data_mut(), gb.data_mut()),
            _ => ln_backward(gy, gamma, cache, &mut gx, &mut [], &mut []),
        }
        gx
    }
}

/// Two linear slots around a GELU, optionally with block-Hadamard mixing
/// between the first slot and the activation.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub(crate) fc1: Linear<T>,
    pub(crate) mix: Option<BlockHadamard>,
    pub(crate) fc2: Linear<T>,
}

pub(crate) struct MlpCache<T> {
    pre: Vec<T>,
    act: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MlpPlan {
    pub fc1: LinearPlan,
    pub mix: Option<BlockHadamard>,
    pub fc2: LinearPlan,
}

impl MlpPlan {
    pub(crate) fn specs(&self, prefix: &str, sink: &mut SpecSink<'_>) {
        self.fc1.specs(&format!("{prefix}.fc1"), sink);
        self.fc2.specs(&format!("{prefix}.fc2"), sink);
    }

    pub(crate) fn build<T: Scalar>(&self, prefix: &str, src: &mut ParamSource<T>) -> Mlp<T> {
        Mlp {
            fc1: self.fc1.build(&format!("{prefix}.fc1"), src),
            mix: self.mix,
            fc2: self.fc2.build(&format!("{prefix}.fc2"), src),
        }
    }
}

impl<T: Scalar> Mlp<T> {
    pub(crate) fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        self.fc1.params(out);
        self.fc2.params(out);
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.fc1.params_mut(out);
        self.fc2.params_mut(out);
    }

    pub(crate) fn forward(&self, exec: Exec, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let mut pre = self.fc1.forward(exec, x)?;
        if let Some(bh) = &self.mix {
            bh.apply_rows(exec, &mut pre);
        }
        let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.fc2.forward(exec, &act)?;
        Ok((y, MlpCache { pre, act }))
    }

    pub(crate) fn backward(&mut self, exec: Exec, x: &[T], gy: &[T], cache: &MlpCache<T>) -> Result<Vec<T>> {
        let mut g = self.fc2.backward(exec, &cache.act, gy)?;
        g.iter_mut().zip(&cache.pre).for_each(|(g, &p)| *g *= gelu_backward(p));
        if let Some(bh) = &self.mix {
            bh.apply_rows(exec, &mut g);
        }
        self.fc1.backward(exec, x, &g)
    }
}

/// Pre-norm decoder block: attention with rotary q/k, then MLP, each on a
/// residual branch.
#[derive(Debug, Clone)]
pub struct DecoderLayer<T> {
    pub(crate) ln1: LayerNorm<T>,
    pub(crate) q: Linear<T>,
    pub(crate) k: Linear<T>,
    pub(crate) v: Linear<T>,
    pub(crate) o: Linear<T>,
    pub(crate) ln2: LayerNorm<T>,
    pub(crate) mlp: Mlp<T>,
    pub(crate) heads: usize,
}

pub(crate) struct DecoderCache<T> {
    ln1: LayerNormCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn_mask: Option<Vec<T>>,
    o: Vec<T>,
    drop1: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
    c: Vec<T>,
    mlp: MlpCache<T>,
    drop2: Option<Vec<T>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderPlan {
    pub d: usize,
    pub heads: usize,
    pub attn: [LinearPlan; 4],
    pub mlp: MlpPlan,
}

impl DecoderPlan {
    pub(crate) fn specs(&self, prefix: &str, sink: &mut SpecSink<'_>) {
        LayerNorm::<f64>::specs(&format!("{prefix}.ln1"), self.d, sink);
        for (name, plan) in ["q", "k", "v", "o"].iter().zip(&self.attn) {
            plan.specs(&format!("{prefix}.attn.{name}"), sink);
        }
        LayerNorm::<f64>::specs(&format!("{prefix}.ln2"), self.d, sink);
        self.mlp.specs(&format!("{prefix}.mlp"), sink);
    }

    pub(crate) fn build<T: Scalar>(&self, prefix: &str, src: &mut ParamSource<T>) -> DecoderLayer<T> {
        let ln1 = LayerNorm::build(&format!("{prefix}.ln1"), src);
        let mut slot = |i: usize, name: &str| self.attn[i].build(&format!("{prefix}.attn.{name}"), src);
        let (q, k, v, o) = (slot(0, "q"), slot(1, "k"), slot(2, "v"), slot(3, "o"));
        let ln2 = LayerNorm::build(&format!("{prefix}.ln2"), src);
        let mlp = self.mlp.build(&format!("{prefix}.mlp"), src);
        DecoderLayer {
            ln1,
            q,
            k,
            v,
            o,
            ln2,
            mlp,
            heads: self.heads,
        }
    }
}

impl<T: Scalar> DecoderLayer<T> {
    pub(crate) fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        self.ln1.params(out);
        for l in [&self.q, &self.k, &self.v, &self.o] {
            l.params(out);
        }
        self.ln2.params(out);
        self.mlp.params(out);
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.ln1.params_mut(out);
        self.q.params_mut(out);
        self.k.params_mut(out);
        self.v.params_mut(out);
        self.o.params_mut(out);
        self.ln2.params_mut(out);
        self.mlp.params_mut(out);
    }

    fn dims(&self, ctx: &Ctx<'_, T>) -> Dims {
        Dims {
            batch: ctx.batch,
            seq: ctx.seq,
            d: self.q.n_out,
            heads: self.heads,
        }
    }

    pub(crate) fn forward(&self, x: &[T], ctx: &mut Ctx<'_, T>) -> Result<(Vec<T>, DecoderCache<T>)> {
        let exec = ctx.exec;
        let dims = self.dims(ctx);
        let (a, ln1) = self.ln1.forward(x);
        let mut q = self.q.forward(exec, &a)?;
        let mut k = self.k.forward(exec, &a)?;
        let v = self.v.forward(exec, &a)?;
        ctx.rope.apply(&mut q, dims.d, ctx.seq, false);
        ctx.rope.apply(&mut k, dims.d, ctx.seq, false);
        let attn_mask = ctx.mask(ctx.batch * self.heads * ctx.seq * ctx.seq, ctx.attn_dropout);
        let (o, probs) = attention_forward(exec, &dims, &q, &k, &v, attn_mask.as_deref())?;
        let mut y = self.o.forward(exec, &o)?;
        let drop1 = ctx.mask(y.len(), ctx.dropout);
        apply_mask(&mut y, &drop1);
        add_into(&mut y, x);
        let x1 = y;
        let (c, ln2) = self.ln2.forward(&x1);
        let (mut m, mlp) = self.mlp.forward(exec, &c)?;
        let drop2 = ctx.mask(m.len(), ctx.dropout);
        apply_mask(&mut m, &drop2);
        add_into(&mut m, &x1);
        let cache = DecoderCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn_mask,
            o,
            drop1,
            ln2,
            c,
            mlp,
            drop2,
        };
        Ok((m, cache))
    }

    pub(crate) fn backward(&mut self, gout: Vec<T>, cache: DecoderCache<T>, ctx: &Ctx<'_, T>) -> Result<Vec<T>> {
        let exec = ctx.exec;
        let dims = self.dims(ctx);
        let mut gm = gout.clone();
        apply_mask(&mut gm, &cache.drop2);
        let gc = self.mlp.backward(exec, &cache.c, &gm, &cache.mlp)?;
        let mut gx1 = gout;
        add_into(&mut gx1, &self.ln2.backward(&gc, &cache.ln2));
        let mut gy = gx1.clone();
        apply_mask(&mut gy, &cache.drop1);
        let go = self.o.backward(exec, &cache.o, &gy)?;
        let (mut gq, mut gk, gv) = attention_backward(
            exec,
            &dims,
            &cache.q,
            &cache.k,
            &cache.v,
            &cache.probs,
            cache.attn_mask.as_deref(),
            &go,
        )?;
        ctx.rope.apply(&mut gq, dims.d, ctx.seq, true);
        ctx.rope.apply(&mut gk, dims.d, ctx.seq, true);
        let mut ga = self.q.backward(exec, &cache.a, &gq)?;
        add_into(&mut ga, &self.k.backward(exec, &cache.a, &gk)?);
        add_into(&mut ga, &self.v.backward(exec, &cache.a, &gv)?);
        let mut gx = gx1;
        add_into(&mut gx, &self.ln1.backward(&ga, &cache.ln1));
        Ok(gx)
    }
}

/// Attention-free block of frozen random parameters: its own layer norm
/// and a wide dense MLP on a residual branch.
#[derive(Debug, Clone)]
pub struct FrozenMlpLayer<T> {
    pub(crate) ln: LayerNorm<T>,
    pub(crate) mlp: Mlp<T>,
}

pub(crate) struct FrozenCache<T> {
    ln: LayerNormCache<T>,
    c: Vec<T>,
    mlp: MlpCache<T>,
    drop: Option<Vec<T>>,
}

impl<T: Scalar> FrozenMlpLayer<T> {
    pub(crate) fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        self.ln.params(out);
        self.mlp.params(out);
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.ln.params_mut(out);
        self.mlp.params_mut(out);
    }

    pub(crate) fn forward(&self, x: &[T], ctx: &mut Ctx<'_, T>) -> Result<(Vec<T>, FrozenCache<T>)> {
        let (c, ln) = self.ln.forward(x);
        let (mut m, mlp) = self.mlp.forward(ctx.exec, &c)?;
        let drop = ctx.mask(m.len(), ctx.dropout);
        apply_mask(&mut m, &drop);
        add_into(&mut m, x);
        Ok((m, FrozenCache { ln, c, mlp, drop }))
    }

    pub(crate) fn backward(&mut self, gout: Vec<T>, cache: FrozenCache<T>, ctx: &Ctx<'_, T>) -> Result<Vec<T>> {
        let mut gm = gout.clone();
        apply_mask(&mut gm, &cache.drop);
        let gc = self.mlp.backward(ctx.exec, &cache.c, &gm, &cache.mlp)?;
        let mut gx = gout;
        add_into(&mut gx, &self.ln.backward(&gc, &cache.ln));
        Ok(gx)
    }
}
