//! Decoder-only transformer with pluggable MLP parametrizations and
//! optional frozen random layers interleaved between trainable ones.

mod attention;
mod config;
mod layers;
mod linear;
mod param;
pub mod presets;
mod rope;

pub use config::{LayerKind, Layout, MlpKind, ModelConfig};
pub use layers::{DecoderLayer, FrozenMlpLayer, LayerNorm, Mlp, LN_EPS};
pub use param::{Init, Param, ParamSpec};
pub use rope::rope_rotate;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::ce_kernel;
use crate::numerics::{gemm, Exec, MatRef, Scalar};
use crate::transforms::BlockHadamard;

use layers::{Ctx, DecoderCache, DecoderPlan, FrozenCache, MlpPlan};
use linear::LinearPlan;
use param::{materialize, ParamSource, SpecSink};
use rope::RopeTable;

/// Parameter counts of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    /// Trainable parameters outside the embedding.
    pub trainable: u64,
    /// Frozen (never updated) parameters.
    pub frozen: u64,
    /// Dense-equivalent size of the trainable non-embedding parameters.
    pub emulated: u64,
    pub embedding: u64,
}

impl Census {
    fn add(&mut self, len: u64, trainable: bool, embedding: bool, emulated: u64) {
        if embedding {
            self.embedding += len;
        } else if trainable {
            self.trainable += len;
            self.emulated += emulated;
        } else {
            self.frozen += len;
        }
    }

    pub fn from_specs(specs: &[ParamSpec]) -> Self {
        let mut c = Census::default();
        for s in specs {
            c.add(s.len(), s.trainable, s.embedding, s.emulated);
        }
        c
    }
}

#[derive(Debug, Clone, Copy)]
enum BlockPlan {
    Decoder(DecoderPlan),
    Frozen { d: usize, mlp: MlpPlan },
}

fn block_plans(cfg: &ModelConfig) -> Vec<BlockPlan> {
    let d = cfg.d_model;
    let std = cfg.init_std;
    let resid = std / (2.0 * cfg.n_layers as f64).sqrt();
    let attn = |std: f64| {
        if cfg.structured_attention {
            LinearPlan::FastFood { n_in: d, n_out: d }
        } else {
            LinearPlan::Dense { n_in: d, n_out: d, std }
        }
    };
    let h = cfg.hidden();
    let b = cfg.block_count;
    let mlp = match cfg.mlp_kind {
        MlpKind::Dense => MlpPlan {
            fc1: LinearPlan::Dense { n_in: d, n_out: h, std },
            mix: None,
            fc2: LinearPlan::Dense {
                n_in: h,
                n_out: d,
                std: resid,
            },
        },
        MlpKind::Fastfood => MlpPlan {
            fc1: LinearPlan::FastFood { n_in: d, n_out: h },
            mix: None,
            fc2: LinearPlan::FastFood { n_in: h, n_out: d },
        },
        MlpKind::Block => MlpPlan {
            fc1: LinearPlan::BlockDiag {
                n_in: d,
                n_out: h,
                blocks: b,
                std,
            },
            mix: Some(BlockHadamard::for_width(h, b).expect("validated block count")),
            fc2: LinearPlan::BlockDiag {
                n_in: h,
                n_out: d,
                blocks: b,
                std: resid,
            },
        },
    };
    let fh = cfg.frozen_hidden();
    let frozen_mlp = MlpPlan {
        fc1: LinearPlan::Dense {
            n_in: d,
            n_out: fh,
            std,
        },
        mix: None,
        fc2: LinearPlan::Dense {
            n_in: fh,
            n_out: d,
            std: resid,
        },
    };
    cfg.layout()
        .kinds()
        .iter()
        .map(|kind| match kind {
            LayerKind::Trainable => BlockPlan::Decoder(DecoderPlan {
                d,
                heads: cfg.n_heads,
                attn: [attn(std), attn(std), attn(std), attn(resid)],
                mlp,
            }),
            LayerKind::Frozen => BlockPlan::Frozen { d, mlp: frozen_mlp },
        })
        .collect()
}

/// Every parameter array the configuration implies, in model order.
/// Nothing is allocated, so full-size presets are cheap to count.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut sink = SpecSink {
        out: &mut out,
        trainable: true,
        stream: "embed".into(),
    };
    sink.push(
        "embed.weight".into(),
        &[cfg.vocab_size, cfg.d_model],
        Init::Normal {
            mean: 0.0,
            std: cfg.init_std,
        },
        (cfg.vocab_size * cfg.d_model) as u64,
    );
    sink.out.last_mut().expect("just pushed").embedding = true;
    for (j, plan) in block_plans(cfg).iter().enumerate() {
        let prefix = format!("layers.{j}");
        match plan {
            BlockPlan::Decoder(p) => {
                sink.trainable = true;
                sink.stream = format!("decoder/{j}");
                p.specs(&prefix, &mut sink);
            }
            BlockPlan::Frozen { d, mlp } => {
                sink.trainable = false;
                sink.stream = format!("frozen/{j}");
                LayerNorm::<f64>::specs(&format!("{prefix}.ln"), *d, &mut sink);
                mlp.specs(&format!("{prefix}.mlp"), &mut sink);
            }
        }
    }
    sink.trainable = true;
    sink.stream = "final".into();
    LayerNorm::<f64>::specs("ln_f", cfg.d_model, &mut sink);
    Ok(out)
}

/// Counts a configuration without building it.
pub fn census(cfg: &ModelConfig) -> Result<Census> {
    Ok(Census::from_specs(&param_specs(cfg)?))
}

#[derive(Debug, Clone)]
pub enum Block<T> {
    Decoder(DecoderLayer<T>),
    Frozen(FrozenMlpLayer<T>),
}

enum BlockCache<T> {
    Decoder(DecoderCache<T>),
    Frozen(FrozenCache<T>),
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache<T> {
    batch: usize,
    seq: usize,
    tokens: Vec<u32>,
    blocks: Vec<BlockCache<T>>,
    ln_f: crate::numerics::LayerNormCache<T>,
    hidden: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    cfg: ModelConfig,
    embed: Param<T>,
    blocks: Vec<Block<T>>,
    ln_f: LayerNorm<T>,
    rope: RopeTable<T>,
    exec: Exec,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes a model from `cfg.seed`.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let specs = param_specs(cfg)?;
        let mut src = ParamSource::new(materialize::<T>(&specs, cfg.seed));
        let embed = src.take("embed.weight");
        let blocks = block_plans(cfg)
            .iter()
            .enumerate()
            .map(|(j, plan)| {
                let prefix = format!("layers.{j}");
                match plan {
                    BlockPlan::Decoder(p) => Block::Decoder(p.build(&prefix, &mut src)),
                    BlockPlan::Frozen { mlp, .. } => Block::Frozen(FrozenMlpLayer {
                        ln: LayerNorm::build(&format!("{prefix}.ln"), &mut src),
                        mlp: mlp.build(&format!("{prefix}.mlp"), &mut src),
                    }),
                }
            })
            .collect();
        let ln_f = LayerNorm::build("ln_f", &mut src);
        src.finish();
        Ok(Model {
            cfg: cfg.clone(),
            embed,
            blocks,
            ln_f,
            rope: RopeTable::new(cfg.d_head(), cfg.context)?,
            exec: Exec::auto(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    /// All parameters in model order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = vec![&self.embed];
        for b in &self.blocks {
            match b {
                Block::Decoder(l) => l.params(&mut out),
                Block::Frozen(l) => l.params(&mut out),
            }
        }
        self.ln_f.params(&mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.embed];
        for b in &mut self.blocks {
            match b {
                Block::Decoder(l) => l.params_mut(&mut out),
                Block::Frozen(l) => l.params_mut(&mut out),
            }
        }
        self.ln_f.params_mut(&mut out);
        out
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for p in self.params() {
            c.add(p.len() as u64, p.trainable(), p.embedding, p.emulated);
        }
        c
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn check_tokens(&self, tokens: &[u32], batch: usize, seq: usize) -> Result<()> {
        if batch == 0 || seq == 0 || tokens.len() != batch * seq {
            return Err(Error::shape(format!(
                "{} tokens do not form {batch} sequences of {seq}",
                tokens.len()
            )));
        }
        if seq > self.cfg.context {
            return Err(Error::shape(format!(
                "sequence length {seq} exceeds context {}",
                self.cfg.context
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token {t} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    fn ctx<'a>(&'a self, batch: usize, seq: usize, rng: Option<&'a mut ChaCha8Rng>) -> Ctx<'a, T> {
        Ctx {
            exec: self.exec,
            batch,
            seq,
            rope: &self.rope,
            rng,
            dropout: self.cfg.dropout,
            attn_dropout: self.cfg.attn_dropout,
        }
    }

    /// Logits `[batch·seq, vocab]` for row-major token windows. Dropout is
    /// active only when `rng` is given.
    pub fn forward(
        &self,
        tokens: &[u32],
        batch: usize,
        seq: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_tokens(tokens, batch, seq)?;
        let d = self.cfg.d_model;
        let v = self.cfg.vocab_size;
        let emb = self.embed.data();
        let mut x = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            x.extend_from_slice(&emb[t as usize * d..(t as usize + 1) * d]);
        }
        let mut ctx = self.ctx(batch, seq, rng);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, cache) = match b {
                Block::Decoder(l) => {
                    let (y, c) = l.forward(&x, &mut ctx)?;
                    (y, BlockCache::Decoder(c))
                }
                Block::Frozen(l) => {
                    let (y, c) = l.forward(&x, &mut ctx)?;
                    (y, BlockCache::Frozen(c))
                }
            };
            caches.push(cache);
            x = y;
        }
        let (hidden, ln_f) = self.ln_f.forward(&x);
        let rows = tokens.len();
        let mut logits = vec![T::zero(); rows * v];
        gemm(
            self.exec,
            T::one(),
            MatRef::dense(&hidden, rows, d)?,
            MatRef::dense(emb, v, d)?.t(),
            T::zero(),
            &mut logits,
        )?;
        let cache = ForwardCache {
            batch,
            seq,
            tokens: tokens.to_vec(),
            blocks: caches,
            ln_f,
            hidden,
        };
        Ok((logits, cache))
    }

    /// Mean next-token cross-entropy in nats, no dropout, no gradients.
    pub fn loss(&self, tokens: &[u32], targets: &[u32], batch: usize, seq: usize) -> Result<f64> {
        let (logits, _) = self.forward(tokens, batch, seq, None)?;
        Ok(ce_kernel(
            &logits,
            self.cfg.vocab_size,
            &self.targets(targets, tokens.len())?,
            None,
        ))
    }

    fn targets(&self, targets: &[u32], rows: usize) -> Result<Vec<usize>> {
        if targets.len() != rows {
            return Err(Error::shape(format!("{} targets for {rows} positions", targets.len())));
        }
        targets
            .iter()
            .map(|&t| {
                let t = t as usize;
                if t < self.cfg.vocab_size {
                    Ok(t)
                } else {
                    Err(Error::invalid(format!("target {t} outside vocabulary")))
                }
            })
            .collect()
    }

    /// Forward and backward pass; gradients are accumulated into the
    /// trainable parameters. Returns the mean loss.
    pub fn loss_and_grad(
        &mut self,
        tokens: &[u32],
        targets: &[u32],
        batch: usize,
        seq: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let (mut logits, cache) = self.forward(tokens, batch, seq, rng)?;
        let targets = self.targets(targets, tokens.len())?;
        let loss = {
            let probs = logits.clone();
            ce_kernel(&probs, self.cfg.vocab_size, &targets, Some(&mut logits))
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {loss}")));
        }
        self.backward(&logits, cache)?;
        Ok(loss)
    }

    /// Backward pass from logit gradients `[batch·seq, vocab]`.
    pub fn backward(&mut self, glogits: &[T], cache: ForwardCache<T>) -> Result<()> {
        let d = self.cfg.d_model;
        let v = self.cfg.vocab_size;
        let rows = cache.tokens.len();
        if glogits.len() != rows * v {
            return Err(Error::shape(format!(
                "logit gradient has {} elements, expected {rows}x{v}",
                glogits.len()
            )));
        }
        let exec = self.exec;
        let mut gh = vec![T::zero(); rows * d];
        gemm(
            exec,
            T::one(),
            MatRef::dense(glogits, rows, v)?,
            MatRef::dense(self.embed.data(), v, d)?,
            T::zero(),
            &mut gh,
        )?;
        if let (_, Some(ge)) = self.embed.split() {
            gemm(
                exec,
                T::one(),
                MatRef::dense(glogits, rows, v)?.t(),
                MatRef::dense(&cache.hidden, rows, d)?,
                T::one(),
                ge,
            )?;
        }
        let mut g = self.ln_f.backward(&gh, &cache.ln_f);
        let ForwardCache {
            batch,
            seq,
            tokens,
            blocks,
            ..
        } = cache;
        let ctx = Ctx {
            exec,
            batch,
            seq,
            rope: &self.rope,
            rng: None,
            dropout: self.cfg.dropout,
            attn_dropout: self.cfg.attn_dropout,
        };
        for (b, c) in self.blocks.iter_mut().zip(blocks).rev() {
            g = match (b, c) {
                (Block::Decoder(l), BlockCache::Decoder(c)) => l.backward(g, c, &ctx)?,
                (Block::Frozen(l), BlockCache::Frozen(c)) => l.backward(g, c, &ctx)?,
                _ => unreachable!("cache built by the same model"),
            };
        }
        if let (_, Some(ge)) = self.embed.split() {
            for (r, &t) in tokens.iter().enumerate() {
                let dst = &mut ge[t as usize * d..(t as usize + 1) * d];
                dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, &b)| *a += b);
            }
        }
        Ok(())
    }
}
