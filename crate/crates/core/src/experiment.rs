//! Experiment documents and the drivers behind the command-line tool:
//! training into a run directory, census reports, scaling-law fits over
//! run logs, and the figure recipes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::accounting::{compute_budget, BudgetInputs, CostScenario};
use crate::data::{synthesize, ByteCorpus, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{census, presets, Census, MlpKind, Model, ModelConfig};
use crate::numerics::Scalar;
use crate::scalefit::{
    apply_floor, fit_power_law, fit_power_law_with_offset, lower_envelope, read_runlog, render_curve, render_fit,
    CurvePoint, LossColumn, PowerLawFit,
};
use crate::trainer::{LogRow, LogWriter, TrainOptions, TrainSchedule, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F32,
    F64,
}

/// Where the bytes come from: a file, or the built-in synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    /// Separate validation file; when absent the tail of the corpus is held out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_corpus: Option<PathBuf>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.05
}

impl DataSection {
    pub fn synthetic(bytes: usize, seed: u64) -> Self {
        DataSection {
            corpus: None,
            synth: Some(SynthConfig::new(bytes, seed)),
            val_corpus: None,
            val_fraction: default_val_fraction(),
        }
    }

    fn validate(&self) -> Result<()> {
        match (&self.corpus, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::config("data", "give either corpus or synth, not both")),
            (None, None) => return Err(Error::config("data", "needs a corpus path or a synth section")),
            _ => {}
        }
        for (field, p) in [("data.corpus", &self.corpus), ("data.val_corpus", &self.val_corpus)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::config(field, format!("{} does not exist", p.display())));
                }
            }
        }
        if self.val_corpus.is_none() && !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::config("data.val_fraction", "must lie in (0, 0.5)"));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<ByteCorpus> {
        self.validate()?;
        let bytes = match (&self.corpus, &self.synth) {
            (Some(p), _) => std::fs::read(p).map_err(|e| Error::io(p, e))?,
            (None, Some(s)) => synthesize(s),
            (None, None) => unreachable!("validated"),
        };
        match &self.val_corpus {
            Some(p) => ByteCorpus::with_validation(bytes, std::fs::read(p).map_err(|e| Error::io(p, e))?),
            None => ByteCorpus::from_bytes(bytes, self.val_fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub batch_size: usize,
    /// Validation loss is logged every this many steps, and at the end.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_val_batches")]
    pub val_batches: usize,
    /// Stop after this many steps even if the token budget is not spent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<u64>,
    #[serde(default)]
    pub dtype: DType,
}

fn default_eval_interval() -> u64 {
    100
}

fn default_val_batches() -> usize {
    16
}

/// A fully resolved experiment. Presets in the file are expanded on load,
/// so serializing one gives an explicit document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub data: DataSection,
    pub run: RunSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Value,
    schedule: Value,
    data: DataSection,
    run: RunSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelPreset {
    preset: String,
    #[serde(default = "one")]
    scale: usize,
    #[serde(default)]
    dropout: Option<f64>,
    #[serde(default)]
    attn_dropout: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchedulePreset {
    preset: String,
    #[serde(default = "one")]
    scale: usize,
}

fn one() -> usize {
    1
}

fn section<D: serde::de::DeserializeOwned>(name: &str, v: Value) -> Result<D> {
    serde_json::from_value(v).map_err(|e| Error::config(name, e.to_string()))
}

fn is_preset(v: &Value) -> bool {
    v.get("preset").is_some()
}

impl ExperimentConfig {
    /// Parses a document; relative paths are taken from `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let model = if is_preset(&raw.model) {
            let p: ModelPreset = section("model", raw.model)?;
            let mut m = scaled_model(&p.preset, p.scale)?;
            if let Some(d) = p.dropout {
                m.dropout = d;
            }
            if let Some(d) = p.attn_dropout {
                m.attn_dropout = d;
            }
            m
        } else {
            section("model", raw.model)?
        };
        let schedule = if is_preset(&raw.schedule) {
            let p: SchedulePreset = section("schedule", raw.schedule)?;
            scaled_schedule(&p.preset, p.scale)?
        } else {
            section("schedule", raw.schedule)?
        };
        let mut cfg = ExperimentConfig {
            model,
            schedule,
            data: raw.data,
            run: raw.run,
        };
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data.corpus.as_mut().map(rebase);
        cfg.data.val_corpus.as_mut().map(rebase);
        rebase(&mut cfg.run.out_dir);
        cfg.model.seed = cfg.run.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.data.validate()?;
        if self.run.batch_size == 0 {
            return Err(Error::config("run.batch_size", "must be positive"));
        }
        if self.run.eval_interval == 0 {
            return Err(Error::config("run.eval_interval", "must be positive"));
        }
        if self.run.checkpoint_interval == Some(0) {
            return Err(Error::config("run.checkpoint_interval", "must be positive"));
        }
        if self.run.steps == Some(0) {
            return Err(Error::config("run.steps", "must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.run.batch_size,
            eval_interval: self.run.eval_interval,
            val_batches: self.run.val_batches,
            seed: self.run.seed,
        }
    }

    pub fn batch_tokens(&self) -> u64 {
        (self.run.batch_size * self.model.context) as u64
    }

    /// Steps the run will take: the token budget, capped by `run.steps`.
    pub fn steps(&self) -> u64 {
        let budget = self.schedule.max_tokens.div_ceil(self.batch_tokens());
        self.run.steps.map_or(budget, |s| s.min(budget))
    }
}

/// Batch size shared by every reference run.
pub const PRESET_BATCH: usize = 80;

/// Full-size schedule of a named preset.
pub fn schedule_preset(name: &str) -> Option<TrainSchedule> {
    presets::preset(name)?;
    let (lr, decay) = match name {
        "medium" | "doped-medium" => (3e-4, 40_900_000_000),
        "block" => (5e-4, 40_900_000_000),
        _ => (5e-4, 32_800_000_000),
    };
    Some(TrainSchedule::new(lr, 409_600_000, decay, 32_000_000_000))
}

fn check_scale(scale: usize) -> Result<()> {
    if scale == 0 {
        return Err(Error::config("scale", "must be at least 1"));
    }
    Ok(())
}

/// Shrinks an architecture by `scale`: width and context are divided, the
/// layer count and every ratio (hidden multiples, block count, layout) kept.
/// Heads are divided too, then lowered until they split the width into even
/// head sizes.
pub fn shrink_model(cfg: &ModelConfig, scale: usize) -> Result<ModelConfig> {
    check_scale(scale)?;
    let mut c = cfg.clone();
    for (field, v) in [("model.d_model", cfg.d_model), ("model.context", cfg.context)] {
        if v % scale != 0 {
            return Err(Error::config(field, format!("scale {scale} does not divide {v}")));
        }
    }
    c.d_model = cfg.d_model / scale;
    c.context = cfg.context / scale;
    let mut heads = (cfg.n_heads / scale).max(1);
    while heads > 1 && !(c.d_model.is_multiple_of(heads) && (c.d_model / heads).is_multiple_of(2)) {
        heads -= 1;
    }
    c.n_heads = heads;
    c.validate()?;
    Ok(c)
}

/// Shrinks a schedule to go with [`shrink_model`]: token counts are divided
/// by `scale³`, which keeps tokens per parameter within a factor `scale` of
/// the full-size runs while cutting compute by `scale⁵`.
pub fn shrink_schedule(s: &TrainSchedule, scale: usize) -> Result<TrainSchedule> {
    check_scale(scale)?;
    let k = (scale as u64).pow(3);
    let mut out = s.clone();
    out.warmup_tokens = (s.warmup_tokens / k).max(1);
    out.decay_tokens = (s.decay_tokens / k).max(out.warmup_tokens + 1);
    out.max_tokens = (s.max_tokens / k).max(1);
    Ok(out)
}

fn unknown_preset(name: &str) -> Error {
    Error::config(
        "preset",
        format!("unknown preset {name:?}; available: {}", presets::NAMES.join(", ")),
    )
}

pub fn scaled_model(name: &str, scale: usize) -> Result<ModelConfig> {
    shrink_model(&presets::preset(name).ok_or_else(|| unknown_preset(name))?, scale)
}

pub fn scaled_schedule(name: &str, scale: usize) -> Result<TrainSchedule> {
    shrink_schedule(&schedule_preset(name).ok_or_else(|| unknown_preset(name))?, scale)
}

/// Dense model of the same width and context whose depth brings its
/// trainable count closest to `target`.
fn dense_matching(cfg: &ModelConfig, target: u64, max_layers: usize) -> Result<ModelConfig> {
    let mut best: Option<(u64, ModelConfig)> = None;
    for layers in 1..=max_layers {
        let mut c = cfg.clone();
        c.n_layers = layers;
        c.mlp_kind = MlpKind::Dense;
        c.structured_attention = false;
        c.doped_layout = None;
        let gap = census(&c)?.trainable.abs_diff(target);
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, c));
        }
    }
    Ok(best.expect("at least one depth").1)
}

/// Dense baseline with about as many trainable parameters as `cfg`.
pub fn equal_trainable_baseline(cfg: &ModelConfig) -> Result<ModelConfig> {
    dense_matching(cfg, census(cfg)?.trainable, 4 * cfg.n_layers)
}

/// Dense baseline with about as many parameters as `cfg` emulates.
pub fn equal_emulated_baseline(cfg: &ModelConfig) -> Result<ModelConfig> {
    dense_matching(cfg, census(cfg)?.emulated, 4 * cfg.n_layers)
}

/// Dense model made of the trainable layers of a doped model.
pub fn skeleton(cfg: &ModelConfig) -> ModelConfig {
    let mut c = cfg.clone();
    c.n_layers = cfg.layout().trainable_layers();
    c.doped_layout = None;
    c
}

/// Stretches a schedule's token counts by `factor`.
pub fn stretch_schedule(s: &TrainSchedule, factor: f64) -> TrainSchedule {
    let scale = |t: u64| ((t as f64 * factor).round() as u64).max(1);
    let mut out = s.clone();
    out.warmup_tokens = scale(s.warmup_tokens);
    out.decay_tokens = scale(s.decay_tokens).max(out.warmup_tokens + 1);
    out.max_tokens = scale(s.max_tokens);
    out
}

pub const RECIPES: &[&str] = &["fig1", "fig2-3", "fig6", "fig7"];

/// Bytes of synthetic text in recipe configs.
const RECIPE_CORPUS_BYTES: usize = 16 << 20;

fn recipe_config(name: &str, mut model: ModelConfig, schedule: TrainSchedule) -> (String, ExperimentConfig) {
    let seed = 1;
    model.seed = seed;
    let cfg = ExperimentConfig {
        model,
        schedule,
        data: DataSection::synthetic(RECIPE_CORPUS_BYTES, 0),
        run: RunSection {
            seed,
            out_dir: PathBuf::from("runs").join(name),
            batch_size: PRESET_BATCH,
            eval_interval: default_eval_interval(),
            val_batches: default_val_batches(),
            steps: None,
            checkpoint_interval: Some(1000),
            dtype: DType::F32,
        },
    };
    (name.to_string(), cfg)
}

/// Structured run plus its two dense baselines, each given the same
/// trainable compute as the structured run.
fn structured_recipe(preset: &str, scale: usize) -> Result<Vec<(String, ExperimentConfig)>> {
    let model = scaled_model(preset, scale)?;
    let schedule = scaled_schedule(preset, scale)?;
    let n = census(&model)?.trainable as f64;
    let mut out = vec![recipe_config(preset, model.clone(), schedule.clone())];
    for (tag, base) in [
        ("dense-equal-trainable", equal_trainable_baseline(&model)?),
        ("dense-equal-emulated", equal_emulated_baseline(&model)?),
    ] {
        let factor = n / census(&base)?.trainable as f64;
        out.push(recipe_config(
            &format!("{preset}-{tag}"),
            base,
            stretch_schedule(&schedule, factor),
        ));
    }
    Ok(out)
}

/// Configs implementing one figure's comparison at `scale`.
pub fn recipe(name: &str, scale: usize) -> Result<Vec<(String, ExperimentConfig)>> {
    check_scale(scale)?;
    match name {
        "fig1" => ["xxsmall", "xsmall", "small", "medium"]
            .iter()
            .map(|p| Ok(recipe_config(p, scaled_model(p, scale)?, scaled_schedule(p, scale)?)))
            .collect(),
        "fig2-3" => {
            let mut out = Vec::new();
            for p in ["doped-xsmall", "doped-small", "doped-medium"] {
                let model = scaled_model(p, scale)?;
                let schedule = scaled_schedule(p, scale)?;
                let skel = skeleton(&model);
                out.push(recipe_config(&format!("{p}-skeleton"), skel, schedule.clone()));
                out.push(recipe_config(p, model, schedule));
            }
            Ok(out)
        }
        "fig6" => structured_recipe("fastfood", scale),
        "fig7" => structured_recipe("block", scale),
        other => Err(Error::config(
            "recipe",
            format!("unknown recipe {other:?}; available: {}", RECIPES.join(", ")),
        )),
    }
}

/// Writes each config of a recipe to `<dir>/<name>.json`.
pub fn write_recipe(name: &str, scale: usize, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let configs = recipe(name, scale)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    configs
        .into_iter()
        .map(|(n, cfg)| {
            let path = dir.join(format!("{n}.json"));
            std::fs::write(&path, cfg.to_json()).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Parameter counts and the FLOP budget of a config, as `key=value` lines.
pub fn census_report(cfg: &ExperimentConfig) -> Result<String> {
    let c: Census = census(&cfg.model)?;
    let steps = cfg.steps();
    let mut s = String::new();
    let w = &mut s;
    writeln!(w, "layout={}", cfg.model.layout()).ok();
    writeln!(w, "trainable={}", c.trainable).ok();
    writeln!(w, "frozen={}", c.frozen).ok();
    writeln!(w, "emulated={}", c.emulated).ok();
    writeln!(w, "embedding={}", c.embedding).ok();
    writeln!(w, "batch_tokens={}", cfg.batch_tokens()).ok();
    writeln!(w, "steps={steps}").ok();
    for scenario in [CostScenario::Real, CostScenario::Ideal] {
        let budget = |steps| {
            compute_budget(&BudgetInputs {
                n_trainable: c.trainable,
                n_frozen: c.frozen,
                batch_tokens: cfg.batch_tokens(),
                steps,
                frozen_cost: scenario.factor(),
            })
        };
        let total = budget(steps);
        writeln!(w, "{}_per_step={}", scenario.column(), budget(1).flop).ok();
        writeln!(w, "{}_total={}", scenario.column(), total.flop).ok();
        writeln!(w, "{}_pf_days={:e}", scenario.column(), total.pf_days).ok();
    }
    Ok(s)
}

/// What a finished (or interrupted) training run left behind.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub steps: u64,
    pub last: Option<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step-{step:08}.slcc"))
}

/// Trains `cfg` into its run directory, resuming from `resume` when given.
/// `progress` sees every logged row.
pub fn run_training(
    cfg: &ExperimentConfig,
    resume: Option<&Path>,
    progress: impl FnMut(&LogRow),
) -> Result<RunSummary> {
    cfg.validate()?;
    match cfg.run.dtype {
        DType::F32 => drive::<f32>(cfg, resume, progress),
        DType::F64 => drive::<f64>(cfg, resume, progress),
    }
}

fn drive<T: Scalar>(
    cfg: &ExperimentConfig,
    resume: Option<&Path>,
    mut progress: impl FnMut(&LogRow),
) -> Result<RunSummary> {
    let out = &cfg.run.out_dir;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("config.json", &cfg.to_json())?;
    write("census.txt", &census_report(cfg)?)?;

    let corpus = cfg.data.load()?;
    let mut trainer = match resume {
        Some(path) => {
            let t = Trainer::<T>::resume(path, &corpus)?;
            if t.model().config() != &cfg.model || t.schedule() != &cfg.schedule || t.options() != &cfg.options() {
                return Err(Error::config(
                    "resume",
                    format!("{} was written by a different configuration", path.display()),
                ));
            }
            t
        }
        None => Trainer::new(
            Model::<T>::new(&cfg.model)?,
            cfg.schedule.clone(),
            cfg.options(),
            &corpus,
        )?,
    };
    if let Some(cap) = cfg.run.steps {
        trainer.stop_at(cap);
    }
    let mut log = LogWriter::create(out.join("run.csv"), trainer.log())?;
    let end = trainer.end_step();
    let mut checkpoints = Vec::new();
    while trainer.state().step < end {
        let stepped = trainer.step(&corpus).map(|_| ());
        let row = trainer.log().last().expect("a step always logs a row").clone();
        log.append(&row)?;
        progress(&row);
        stepped?;
        let step = trainer.state().step;
        if cfg.run.checkpoint_interval.is_some_and(|k| step % k == 0) || step == end {
            let p = checkpoint_path(out, step);
            trainer.save(&p)?;
            checkpoints.push(p);
        }
    }
    Ok(RunSummary {
        out_dir: out.clone(),
        steps: trainer.state().step,
        last: trainer.log().last().cloned(),
        checkpoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub cost: CostScenario,
    pub loss: LossColumn,
    /// Fraction of each run's final compute below which points are dropped.
    pub floor: f64,
    /// Fit every run on its own as well as the envelope.
    pub per_run: bool,
    /// Add an irreducible-loss term to every fit.
    pub offset: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            cost: CostScenario::Real,
            loss: LossColumn::Val,
            floor: 0.05,
            per_run: false,
            offset: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// `key=value` report.
    pub report: String,
    /// Fit of the envelope; absent for a single log.
    pub envelope_fit: Option<PowerLawFit>,
    pub run_fits: Vec<(String, PowerLawFit)>,
    /// Named `compute,loss` curves: every run, then the envelope.
    pub curves: Vec<(String, Vec<CurvePoint>)>,
}

/// Run names from their logs' directories, made unique.
fn run_names(paths: &[PathBuf]) -> Vec<String> {
    let raw: Vec<String> = paths
        .iter()
        .map(|p| {
            let dir = p.parent().and_then(|d| d.file_name());
            let stem = p.file_stem();
            let name = match (p.file_name().and_then(|f| f.to_str()), dir) {
                (Some("run.csv"), Some(d)) => d,
                _ => stem.unwrap_or_default(),
            };
            name.to_string_lossy().into_owned()
        })
        .collect();
    raw.iter()
        .enumerate()
        .map(|(i, n)| {
            if raw.iter().filter(|m| *m == n).count() > 1 {
                format!("{n}-{i}")
            } else {
                n.clone()
            }
        })
        .collect()
}

/// Fits the floored lower envelope of several run logs.
pub fn fit_runs(paths: &[PathBuf], opts: &FitOptions) -> Result<FitOutcome> {
    if paths.is_empty() {
        return Err(Error::invalid("no run logs to fit"));
    }
    if !(0.0..1.0).contains(&opts.floor) {
        return Err(Error::config(
            "floor",
            format!("must lie in [0, 1), got {}", opts.floor),
        ));
    }
    let fit = |pts: &[CurvePoint]| {
        if opts.offset {
            fit_power_law_with_offset(pts)
        } else {
            fit_power_law(pts)
        }
    };
    let names = run_names(paths);
    let runs = paths
        .iter()
        .map(|p| read_runlog(p, opts.cost, opts.loss))
        .collect::<Result<Vec<_>>>()?;
    let floored: Vec<Vec<CurvePoint>> = runs.iter().map(|r| apply_floor(r, opts.floor)).collect();
    let envelope = lower_envelope(&floored)?;

    let mut report = String::new();
    writeln!(report, "cost={}", opts.cost).ok();
    writeln!(report, "loss={}", opts.loss.name()).ok();
    writeln!(report, "floor={}", opts.floor).ok();
    writeln!(report, "runs={}", paths.len()).ok();
    let single = paths.len() == 1;
    let envelope_fit = if single { None } else { Some(fit(&envelope)?) };
    if let Some(f) = &envelope_fit {
        report.push_str(&render_fit("envelope", f));
    }
    let mut run_fits = Vec::new();
    if single || opts.per_run {
        for (name, pts) in names.iter().zip(&floored) {
            let f = fit(pts)?;
            report.push_str(&render_fit(&format!("run.{name}"), &f));
            run_fits.push((name.clone(), f));
        }
    }
    let mut curves: Vec<(String, Vec<CurvePoint>)> = names.into_iter().zip(runs).collect();
    curves.push(("envelope".to_string(), envelope));
    Ok(FitOutcome {
        report,
        envelope_fit,
        run_fits,
        curves,
    })
}

/// Writes `fit.txt` and one `curve-<name>.csv` per curve into `dir`.
pub fn write_fit(outcome: &FitOutcome, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok::<_, Error>(())
    };
    put("fit.txt".into(), &outcome.report)?;
    for (name, pts) in &outcome.curves {
        put(format!("curve-{name}.csv"), &render_curve(pts))?;
    }
    Ok(written)
}

/// Estimated FLOP of a whole run under both cost scenarios.
pub fn run_flop(cfg: &ExperimentConfig) -> Result<(u128, u128)> {
    let c = census(&cfg.model)?;
    let f = |s: CostScenario| {
        compute_budget(&BudgetInputs {
            n_trainable: c.trainable,
            n_frozen: c.frozen,
            batch_tokens: cfg.batch_tokens(),
            steps: cfg.steps(),
            frozen_cost: s.factor(),
        })
        .flop
    };
    Ok((f(CostScenario::Real), f(CostScenario::Ideal)))
}
