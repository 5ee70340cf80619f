//! Adam training with token-based warmup and cosine decay, global-norm
//! clipping, fixed validation batches, run logs and resumable checkpoints.

pub mod checkpoint;
mod optim;
mod runlog;
mod schedule;

pub use checkpoint::{read_checkpoint, write_checkpoint, Record};
pub use optim::{adam_step, clip_global_norm, global_norm, AdamParams, Moments, OptimState};
pub use runlog::{render, LogRow, LogWriter, HEADER};
pub use schedule::TrainSchedule;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::{compute_budget, BudgetInputs, CostScenario};
use crate::data::{Batch, ByteCorpus, Split};
use crate::error::{Error, Result};
use crate::model::{Census, Model, ModelConfig};
use crate::numerics::{Exec, Scalar};
use crate::seed;

/// Loop settings that are not part of the learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    /// Sequences per step; each is `model.context` tokens long.
    pub batch_size: usize,
    /// Evaluate validation loss every this many steps (and at the end).
    pub eval_interval: u64,
    #[serde(default = "default_val_batches")]
    pub val_batches: usize,
    pub seed: u64,
}

fn default_val_batches() -> usize {
    16
}

/// Random streams owned by the loop, derived from the run seed.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    (seed::rng(seed, "data"), seed::rng(seed, "dropout"))
}

pub struct Trainer<T> {
    model: Model<T>,
    state: OptimState<T>,
    schedule: TrainSchedule,
    opts: TrainOptions,
    census: Census,
    data_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    val: Vec<Batch>,
    log: Vec<LogRow>,
    stop: Option<u64>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, schedule: TrainSchedule, opts: TrainOptions, corpus: &ByteCorpus) -> Result<Self> {
        schedule.validate()?;
        if opts.batch_size == 0 {
            return Err(Error::config("run.batch_size", "must be positive"));
        }
        if opts.eval_interval == 0 {
            return Err(Error::config("run.eval_interval", "must be positive"));
        }
        let seq = model.config().context;
        let mut val_rng = seed::rng(opts.seed, "val");
        let val = (0..opts.val_batches)
            .map(|_| corpus.sample_batch(Split::Val, opts.batch_size, seq, &mut val_rng))
            .collect::<Result<Vec<_>>>()?;
        // fail early rather than at the first step
        if seq + 1 > corpus.split(Split::Train).len() {
            return Err(Error::invalid(format!(
                "context {seq} does not fit the {}-byte training split",
                corpus.split(Split::Train).len()
            )));
        }
        let (data_rng, dropout_rng) = streams(opts.seed);
        let state = OptimState::new(model.params());
        Ok(Trainer {
            census: model.census(),
            model,
            state,
            schedule,
            opts,
            data_rng,
            dropout_rng,
            val,
            log: Vec::new(),
            stop: None,
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn state(&self) -> &OptimState<T> {
        &self.state
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn options(&self) -> &TrainOptions {
        &self.opts
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.model.set_exec(exec);
    }

    pub fn batch_tokens(&self) -> u64 {
        (self.opts.batch_size * self.model.config().context) as u64
    }

    /// Steps needed to consume the schedule's token budget.
    pub fn total_steps(&self) -> u64 {
        self.schedule.max_tokens.div_ceil(self.batch_tokens())
    }

    /// Ends the run after `step` updates even if tokens remain; that step
    /// is evaluated like the last one.
    pub fn stop_at(&mut self, step: u64) {
        self.stop = Some(step);
    }

    /// Step the run ends on.
    pub fn end_step(&self) -> u64 {
        self.stop.map_or(self.total_steps(), |s| s.min(self.total_steps()))
    }

    /// Cumulative compute after `steps` updates.
    pub fn flop(&self, steps: u64, scenario: CostScenario) -> u128 {
        compute_budget(&BudgetInputs {
            n_trainable: self.census.trainable,
            n_frozen: self.census.frozen,
            batch_tokens: self.batch_tokens(),
            steps,
            frozen_cost: scenario.factor(),
        })
        .flop
    }

    /// Mean loss over the fixed validation batches.
    pub fn evaluate(&self) -> Result<f64> {
        if self.val.is_empty() {
            return Err(Error::invalid("no validation batches configured"));
        }
        let mut total = 0.0;
        for b in &self.val {
            total += self.model.loss(&b.inputs, &b.targets, b.batch, b.seq)?;
        }
        Ok(total / self.val.len() as f64)
    }

    fn divergence(&mut self, step: u64, tokens: u64, lr: f64, reason: String) -> Error {
        self.log.push(LogRow {
            step,
            tokens,
            flop_real: self.flop(step, CostScenario::Real),
            flop_ideal: self.flop(step, CostScenario::Ideal),
            lr,
            train_loss: f64::NAN,
            val_loss: None,
        });
        Error::Diverged { step, reason }
    }

    /// One update. On divergence a record row is logged and an error
    /// returned; the model is left as it was before the step.
    pub fn step(&mut self, corpus: &ByteCorpus) -> Result<&LogRow> {
        let seq = self.model.config().context;
        let batch = corpus.sample_batch(Split::Train, self.opts.batch_size, seq, &mut self.data_rng)?;
        let step = self.state.step + 1;
        let tokens = self.state.tokens_seen + batch.tokens();
        let lr = self.schedule.lr_at(tokens);
        self.model.zero_grad();
        let loss = match self.model.loss_and_grad(
            &batch.inputs,
            &batch.targets,
            batch.batch,
            batch.seq,
            Some(&mut self.dropout_rng),
        ) {
            Ok(l) => l,
            Err(Error::NonFinite(m)) => return Err(self.divergence(step, tokens, lr, m)),
            Err(e) => return Err(e),
        };
        let clipped = {
            let mut params = self.model.params_mut();
            let mut grads: Vec<&mut [T]> = params
                .iter_mut()
                .filter_map(|p| p.grad.as_mut().map(|g| g.data_mut()))
                .collect();
            clip_global_norm(&mut grads, self.schedule.clip_norm)
        };
        if let Err(Error::NonFinite(m)) = clipped {
            return Err(self.divergence(step, tokens, lr, m));
        }
        clipped?;
        let hp = AdamParams {
            lr,
            betas: self.schedule.betas,
            eps: self.schedule.eps,
            weight_decay: self.schedule.weight_decay,
        };
        adam_step(&mut self.model.params_mut(), &mut self.state, hp)?;
        self.state.tokens_seen = tokens;
        let last = step >= self.end_step();
        let val_loss = if step.is_multiple_of(self.opts.eval_interval) || last {
            Some(self.evaluate()?)
        } else {
            None
        };
        self.log.push(LogRow {
            step,
            tokens,
            flop_real: self.flop(step, CostScenario::Real),
            flop_ideal: self.flop(step, CostScenario::Ideal),
            lr,
            train_loss: loss,
            val_loss,
        });
        Ok(self.log.last().expect("just pushed"))
    }

    /// Steps until the token budget is spent or `limit` more steps have
    /// run, handing each row to `sink`.
    pub fn run(
        &mut self,
        corpus: &ByteCorpus,
        limit: Option<u64>,
        mut sink: impl FnMut(&LogRow) -> Result<()>,
    ) -> Result<()> {
        let end = match limit {
            Some(n) => (self.state.step + n).min(self.end_step()),
            None => self.end_step(),
        };
        while self.state.step < end {
            match self.step(corpus) {
                Ok(row) => sink(row)?,
                Err(e @ Error::Diverged { .. }) => {
                    sink(self.log.last().expect("divergence row"))?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut recs = Vec::new();
        recs.push(Record::bytes("meta/model", &json(self.model.config())));
        recs.push(Record::bytes("meta/schedule", &json(&self.schedule)));
        recs.push(Record::bytes("meta/options", &json(&self.opts)));
        recs.push(Record::u64s(
            "meta/progress",
            &[self.state.step, self.state.tokens_seen, self.model.config().seed],
        ));
        recs.push(Record::bytes("meta/log", render(&self.log).as_bytes()));
        recs.push(Record::u64s("rng/data", &rng_words(&self.data_rng)));
        recs.push(Record::u64s("rng/dropout", &rng_words(&self.dropout_rng)));
        for p in self.model.params() {
            recs.push(Record::scalars(&p.name, p.value.shape(), p.trainable(), p.data()));
        }
        for (mo, p) in self
            .state
            .moments
            .iter()
            .zip(self.model.params().into_iter().filter(|p| p.trainable()))
        {
            recs.push(Record::scalars(
                format!("opt.m/{}", mo.name),
                p.value.shape(),
                false,
                &mo.m,
            ));
            recs.push(Record::scalars(
                format!("opt.v/{}", mo.name),
                p.value.shape(),
                false,
                &mo.v,
            ));
        }
        write_checkpoint(path, &recs)
    }

    /// Restores a trainer exactly as it was when saved.
    pub fn resume(path: impl AsRef<Path>, corpus: &ByteCorpus) -> Result<Self> {
        let recs = read_checkpoint(path)?;
        let mut by_name: std::collections::HashMap<&str, &Record> = recs.iter().map(|r| (r.name.as_str(), r)).collect();
        let mut take = |name: &str| {
            by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))
        };
        let mut cfg: ModelConfig = serde_json::from_slice(take("meta/model")?.to_bytes()?)?;
        let schedule: TrainSchedule = serde_json::from_slice(take("meta/schedule")?.to_bytes()?)?;
        let opts: TrainOptions = serde_json::from_slice(take("meta/options")?.to_bytes()?)?;
        let progress = take("meta/progress")?.to_u64s()?;
        let [step, tokens, model_seed] = progress[..] else {
            return Err(Error::Checkpoint("progress record has the wrong length".into()));
        };
        cfg.seed = model_seed;
        let log_text = String::from_utf8(take("meta/log")?.to_bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("log is not UTF-8".into()))?;
        let log = parse_rows(&log_text)?;
        let data_rng = rng_from_words(&take("rng/data")?.to_u64s()?)?;
        let dropout_rng = rng_from_words(&take("rng/dropout")?.to_u64s()?)?;
        let mut model = Model::<T>::new(&cfg)?;
        for p in model.params_mut() {
            let r = take(&p.name)?;
            if r.shape != p.value.shape() || r.trainable != p.trainable() {
                return Err(Error::Checkpoint(format!("array {} does not match the model", p.name)));
            }
            p.value.data_mut().copy_from_slice(&r.to_scalars::<T>()?);
        }
        let mut state = OptimState::new(model.params());
        for mo in &mut state.moments {
            let m = take(&format!("opt.m/{}", mo.name))?.to_scalars::<T>()?;
            let v = take(&format!("opt.v/{}", mo.name))?.to_scalars::<T>()?;
            if m.len() != mo.m.len() || v.len() != mo.v.len() {
                return Err(Error::Checkpoint(format!("moments of {} have the wrong size", mo.name)));
            }
            mo.m = m;
            mo.v = v;
        }
        state.step = step;
        state.tokens_seen = tokens;
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected array {extra}")));
        }
        let mut t = Trainer::new(model, schedule, opts, corpus)?;
        t.state = state;
        t.data_rng = data_rng;
        t.dropout_rng = dropout_rng;
        t.log = log;
        Ok(t)
    }
}

fn json<S: Serialize>(v: &S) -> Vec<u8> {
    serde_json::to_vec(v).expect("configs serialize")
}

fn rng_words(rng: &ChaCha8Rng) -> [u64; 7] {
    let seed = rng.get_seed();
    let w = |i: usize| u64::from_le_bytes(seed[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    let pos = rng.get_word_pos();
    [w(0), w(1), w(2), w(3), rng.get_stream(), pos as u64, (pos >> 64) as u64]
}

fn rng_from_words(words: &[u64]) -> Result<ChaCha8Rng> {
    let [a, b, c, d, stream, lo, hi] = words[..] else {
        return Err(Error::Checkpoint("rng record has the wrong length".into()));
    };
    let mut seed = [0u8; 32];
    for (i, w) in [a, b, c, d].iter().enumerate() {
        seed[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(((hi as u128) << 64) | lo as u128);
    Ok(rng)
}

/// Parses rows written by [`render`].
pub fn parse_rows(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        _ => return Err(Error::Checkpoint("log header missing".into())),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Parse {
                path: "<checkpoint log>".into(),
                line: i + 2,
                message: format!("malformed row {line:?}"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            Ok(LogRow {
                step: f[0].parse().map_err(|_| bad())?,
                tokens: f[1].parse().map_err(|_| bad())?,
                flop_real: f[2].parse().map_err(|_| bad())?,
                flop_ideal: f[3].parse().map_err(|_| bad())?,
                lr: f[4].parse().map_err(|_| bad())?,
                train_loss: f[5].parse().map_err(|_| bad())?,
                val_loss: if f[6].is_empty() {
                    None
                } else {
                    Some(f[6].parse().map_err(|_| bad())?)
                },
            })
        })
        .collect()
}

/// Trains a fresh model for its whole token budget.
pub fn train<T: Scalar>(
    model: Model<T>,
    corpus: &ByteCorpus,
    schedule: TrainSchedule,
    opts: TrainOptions,
) -> Result<(Model<T>, Vec<LogRow>)> {
    let mut t = Trainer::new(model, schedule, opts, corpus)?;
    t.run(corpus, None, |_| Ok(()))?;
    let log = t.log.clone();
    Ok((t.into_model(), log))
}
