//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; pass criterion numbers
//! (`cargo test --test acceptance -- 7 9`) to run a subset. The process
//! fails only when a correctness criterion fails; the desk-scale training
//! experiments (7-9) report their outcome either way.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use slc_core::data::{synthesize, ByteCorpus, SynthConfig};
use slc_core::experiment::{
    checkpoint_path, equal_emulated_baseline, equal_trainable_baseline, run_training, skeleton, stretch_schedule,
    DataSection, ExperimentConfig, RunSection,
};
use slc_core::model::{census, param_specs, presets, Census, MlpKind, Model, ModelConfig};
use slc_core::scalefit::{apply_floor, fit_power_law, lower_envelope, CurvePoint};
use slc_core::trainer::{train, LogRow, TrainOptions, TrainSchedule, Trainer};
use slc_core::transforms::{transform_census, FastFoodLayer};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn transform_oracles() -> Verdict {
    let (dense, involution) = common::transform_oracle_errors(2024);
    check(
        dense < 1e-12 && involution < 1e-10,
        format!("max |T - matrix| {dense:.1e} (< 1e-12), max |fwht(fwht(x)) - n x| {involution:.1e} (< 1e-10)"),
    )
}

fn gradient_suite() -> Verdict {
    let mut results = common::primitive_gradient_errors(7);
    results.extend(common::structured_gradient_errors(7));
    let mut full = ModelConfig::dense(1, 16, 2, 8);
    full.init_std = 0.3;
    full.seed = 3;
    results.push(("model d=16 dense", common::model_gradient_error(&full, None)));
    for (name, kind) in [
        ("model d=16 fastfood", MlpKind::Fastfood),
        ("model d=16 block", MlpKind::Block),
    ] {
        let mut c = full.clone();
        c.mlp_kind = kind;
        c.structured_attention = kind == MlpKind::Fastfood;
        results.push((name, common::model_gradient_error(&c, None)));
    }
    let mut doped = full.clone();
    doped.n_layers = 3;
    doped.doped_layout = Some("TFT".parse().expect("layout"));
    results.push(("model d=16 doped", common::model_gradient_error(&doped, None)));
    let (worst_name, worst) = results
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    check(
        worst <= 1e-4,
        format!(
            "{} backward passes, worst relative error {worst:.1e} ({worst_name}) (<= 1e-4)",
            results.len()
        ),
    )
}

fn tiny_corpus(bytes: usize, seed: u64) -> ByteCorpus {
    ByteCorpus::from_bytes(synthesize(&SynthConfig::new(bytes, seed)), 0.1).expect("corpus")
}

fn frozen_immutability() -> Verdict {
    let mut cfg = ModelConfig::dense(5, 32, 4, 32);
    cfg.doped_layout = Some("TFTFT".parse().expect("layout"));
    cfg.seed = 4;
    let corpus = tiny_corpus(200_000, 1);
    let model = Model::<f32>::new(&cfg).expect("model");
    let frozen_before: Vec<(String, Vec<u32>)> = model
        .params()
        .iter()
        .filter(|p| !p.trainable())
        .map(|p| (p.name.clone(), p.data().iter().map(|v| v.to_bits()).collect()))
        .collect();
    let bt = 4 * 32;
    let schedule = TrainSchedule::new(3e-3, 20 * bt, 500 * bt, 500 * bt);
    let opts = TrainOptions {
        batch_size: 4,
        eval_interval: 100,
        val_batches: 2,
        seed: 9,
    };
    let mut t = Trainer::new(model, schedule, opts, &corpus).map_err(|e| e.to_string())?;
    t.run(&corpus, None, |_| Ok(())).map_err(|e| e.to_string())?;
    let steps = t.state().step;
    let moment_names: Vec<&str> = t.state().moments.iter().map(|m| m.name.as_str()).collect();
    let model = t.model();
    let mut changed = 0;
    let mut with_moments = 0;
    for (name, bits) in &frozen_before {
        let p = model
            .params()
            .into_iter()
            .find(|p| &p.name == name)
            .expect("same parameters");
        if p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>() != *bits {
            changed += 1;
        }
        if moment_names.contains(&name.as_str()) {
            with_moments += 1;
        }
    }
    let trainable = model.params().iter().filter(|p| p.trainable()).count();
    let moved = model
        .params()
        .iter()
        .filter(|p| p.trainable())
        .zip(
            Model::<f32>::new(&cfg)
                .expect("model")
                .params()
                .iter()
                .filter(|p| p.trainable()),
        )
        .filter(|(a, b)| a.data() != b.data())
        .count();
    check(
        steps == 500 && changed == 0 && with_moments == 0 && moment_names.len() == trainable && moved == trainable,
        format!(
            "{steps} steps; {} frozen arrays, {changed} changed, {with_moments} with moments; {} moment sets for {trainable} trainable arrays, {moved} of which moved",
            frozen_before.len(),
            moment_names.len()
        ),
    )
}

fn census_exactness() -> Verdict {
    let mut problems = Vec::new();
    for name in presets::NAMES {
        let cfg = presets::preset(name).expect("preset");
        let specs = param_specs(&cfg).map_err(|e| e.to_string())?;
        let mut counted = Census::default();
        for s in &specs {
            let n = s.shape.iter().product::<usize>() as u64;
            match (s.embedding, s.trainable) {
                (true, _) => counted.embedding += n,
                (false, true) => counted.trainable += n,
                (false, false) => counted.frozen += n,
            }
        }
        let reported = census(&cfg).map_err(|e| e.to_string())?;
        let closed = common::expected_census(&cfg);
        let counts = |c: &Census| (c.trainable, c.frozen, c.embedding);
        if counts(&reported) != counts(&counted) || reported != closed {
            problems.push(format!(
                "{name}: {reported:?} vs enumerated {counted:?} vs closed form {closed:?}"
            ));
        }
        if cfg.mlp_kind != MlpKind::Dense && reported.emulated <= reported.trainable {
            problems.push(format!(
                "{name}: emulated {} <= trainable {}",
                reported.emulated, reported.trainable
            ));
        }
        if cfg.mlp_kind == MlpKind::Fastfood {
            // each square block of a FastFood slot holds three n-vectors
            for s in specs.iter().filter(|s| s.name.contains(".ff")) {
                let n = s.shape[0];
                let per_block = transform_census(&FastFoodLayer::<f32>::identity(n).expect("width")).trainable;
                let block = s.name.rsplit_once(".d").expect("diagonal name").0;
                let in_block: usize = specs
                    .iter()
                    .filter(|t| t.name.starts_with(&format!("{block}.d")))
                    .map(|t| t.shape[0])
                    .sum();
                if in_block as u64 != per_block || per_block != 3 * n as u64 {
                    problems.push(format!("{}: {in_block} trainable in a block of width {n}", s.name));
                }
            }
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} presets: census = enumeration = closed form; structured emulated > trainable; FastFood 3n per block", presets::NAMES.len())
        } else {
            problems.join("; ")
        },
    )
}

fn budget_exactness() -> Verdict {
    let mut cfg = ModelConfig::dense(3, 32, 4, 32);
    cfg.doped_layout = Some("TFT".parse().expect("layout"));
    cfg.seed = 2;
    let (b, s) = (4usize, 100u64);
    let bt = (b * cfg.context) as u128;
    let corpus = tiny_corpus(100_000, 2);
    let schedule = TrainSchedule::new(1e-3, 10 * bt as u64, s * bt as u64, s * bt as u64);
    let opts = TrainOptions {
        batch_size: b,
        eval_interval: 50,
        val_batches: 1,
        seed: 3,
    };
    let (_, log) =
        train(Model::<f32>::new(&cfg).expect("model"), &corpus, schedule, opts).map_err(|e| e.to_string())?;
    let c = census(&cfg).map_err(|e| e.to_string())?;
    let (nt, nf) = (c.trainable as u128, c.frozen as u128);
    let want = |steps: u128| (6 * nt * bt * steps + 4 * nf * bt * steps, 6 * nt * bt * steps);
    let every_row = log.iter().all(|r| (r.flop_real, r.flop_ideal) == want(r.step as u128));
    let last: &LogRow = log.last().ok_or("empty log")?;
    check(
        log.len() == 100 && every_row && nf > 0,
        format!(
            "S={} N_t={nt} N_f={nf} B={bt}: flop_real {} = {}, flop_ideal {} = {}",
            last.step,
            last.flop_real,
            want(100).0,
            last.flop_ideal,
            want(100).1
        ),
    )
}

fn fit_recovery() -> Verdict {
    let alpha = 0.05;
    let law: Vec<CurvePoint> = (0..50)
        .map(|i| {
            let c = 10f64.powf(15.0 + 5.0 * i as f64 / 49.0);
            CurvePoint::new(c, (c / 2e8).powf(-alpha))
        })
        .collect();
    let exact = (fit_power_law(&law).map_err(|e| e.to_string())?.alpha - alpha).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Normal::<f64>::new(0.0, 0.01).expect("normal");
    let mut errs = Vec::new();
    for _ in 0..100 {
        let noisy: Vec<CurvePoint> = law
            .iter()
            .map(|p| CurvePoint::new(p.compute, p.loss * noise.sample(&mut rng).exp()))
            .collect();
        errs.push((fit_power_law(&noisy).map_err(|e| e.to_string())?.alpha - alpha).abs());
    }
    errs.sort_by(f64::total_cmp);
    let median = (errs[49] + errs[50]) / 2.0;
    check(
        exact < 1e-9 && median < 0.005,
        format!(
            "noiseless |error| {exact:.1e} (< 1e-9); 1% noise median |error| {median:.2e} over 100 trials (< 0.005)"
        ),
    )
}

/// Cosine schedule with 5% warmup that decays to zero at the budget.
fn desk_schedule(peak_lr: f64, tokens: u64) -> TrainSchedule {
    TrainSchedule::new(peak_lr, tokens / 20, tokens, tokens)
}

fn final_val(log: &[LogRow]) -> f64 {
    log.last().and_then(|r| r.val_loss).unwrap_or(f64::NAN)
}

fn run(
    cfg: &ModelConfig,
    seed: u64,
    corpus: &ByteCorpus,
    schedule: TrainSchedule,
    batch: usize,
) -> Result<Vec<LogRow>, String> {
    let mut c = cfg.clone();
    c.seed = seed;
    let opts = TrainOptions {
        batch_size: batch,
        eval_interval: EVAL_INTERVAL,
        val_batches: VAL_BATCHES,
        seed,
    };
    train(
        Model::<f32>::new(&c).map_err(|e| e.to_string())?,
        corpus,
        schedule,
        opts,
    )
    .map(|(_, log)| log)
    .map_err(|e| e.to_string())
}

const EVAL_INTERVAL: u64 = 25;
const VAL_BATCHES: usize = 8;

/// Loss-vs-compute points of a run from its validation rows.
fn val_curve(log: &[LogRow]) -> Vec<CurvePoint> {
    log.iter()
        .filter_map(|r| r.val_loss.map(|v| CurvePoint::new(r.flop_real as f64, v)))
        .collect()
}

const C7_LAYERS: [usize; 3] = [1, 2, 4];
const C7_TOKENS: u64 = 2_457_600;

fn desk_scaling() -> Verdict {
    let corpus = ByteCorpus::from_bytes(synthesize(&SynthConfig::new(6 << 20, 7)), 0.05).map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    let mut finals = Vec::new();
    for layers in C7_LAYERS {
        let cfg = ModelConfig::dense(layers, 128, 4, 256);
        let log = run(&cfg, 1, &corpus, desk_schedule(2e-3, C7_TOKENS), 8)?;
        finals.push(final_val(&log));
        curves.push(apply_floor(&val_curve(&log), 0.05));
    }
    let envelope = lower_envelope(&curves).map_err(|e| e.to_string())?;
    let fit = fit_power_law(&envelope).map_err(|e| e.to_string())?;
    let ordered = finals.windows(2).all(|w| w[1] < w[0]);
    check(
        fit.alpha > 0.01 && fit.alpha < 0.3 && ordered,
        format!(
            "corpus {} MB, {} tokens each; envelope alpha {:.4} over {} points (in (0.01, 0.3)); final val loss by layers {:?}: {:.4?}",
            corpus.bytes().len() >> 20,
            C7_TOKENS,
            fit.alpha,
            fit.points,
            C7_LAYERS,
            finals
        ),
    )
}

const SEEDS: [u64; 3] = [11, 12, 13];
const C8_TOKENS: u64 = 1_000_000;

fn cannot_cheat() -> Verdict {
    let corpus = ByteCorpus::from_bytes(synthesize(&SynthConfig::new(6 << 20, 8)), 0.05).map_err(|e| e.to_string())?;
    let mut structured = ModelConfig::dense(3, 128, 4, 128);
    structured.mlp_kind = MlpKind::Fastfood;
    let trainable = equal_trainable_baseline(&structured).map_err(|e| e.to_string())?;
    let emulated = equal_emulated_baseline(&structured).map_err(|e| e.to_string())?;
    let n = |c: &ModelConfig| census(c).map(|c| c.trainable).unwrap_or(0) as f64;
    let base = desk_schedule(2e-3, C8_TOKENS);
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in SEEDS {
        let ls = final_val(&run(&structured, seed, &corpus, base.clone(), 8)?);
        let lt = final_val(&run(
            &trainable,
            seed,
            &corpus,
            stretch_schedule(&base, n(&structured) / n(&trainable)),
            8,
        )?);
        let le = final_val(&run(
            &emulated,
            seed,
            &corpus,
            stretch_schedule(&base, n(&structured) / n(&emulated)),
            8,
        )?);
        if (ls - lt).abs() < (ls - le).abs() {
            wins += 1;
        }
        rows.push(format!("seed {seed}: Ls {ls:.4} Lt {lt:.4} Le {le:.4}"));
    }
    check(
        wins >= 2,
        format!(
            "N_s {} (emulating {}), equal-trainable {} layers N {}, equal-emulated {} layers N {}; |Ls-Lt| < |Ls-Le| in {wins}/3 seeds; {}",
            n(&structured),
            census(&structured).map(|c| c.emulated).unwrap_or(0),
            trainable.n_layers,
            n(&trainable),
            emulated.n_layers,
            n(&emulated),
            rows.join(", ")
        ),
    )
}

const C9_TOKENS: u64 = 1_000_000;

fn free_doping() -> Verdict {
    let corpus = ByteCorpus::from_bytes(synthesize(&SynthConfig::new(6 << 20, 9)), 0.05).map_err(|e| e.to_string())?;
    let mut doped = ModelConfig::dense(3, 128, 4, 128);
    doped.doped_layout = Some("TFT".parse().expect("layout"));
    let skel = skeleton(&doped);
    let (cd, cs) = (
        census(&doped).map_err(|e| e.to_string())?,
        census(&skel).map_err(|e| e.to_string())?,
    );
    let schedule = desk_schedule(2e-3, C9_TOKENS);
    let mut close = 0;
    let mut rows = Vec::new();
    for seed in SEEDS {
        let dl = run(&doped, seed, &corpus, schedule.clone(), 8)?;
        let sl = run(&skel, seed, &corpus, schedule.clone(), 8)?;
        let (a, b) = (dl.last().ok_or("empty")?, sl.last().ok_or("empty")?);
        if a.flop_ideal != b.flop_ideal {
            return Err(format!("ideal compute differs: {} vs {}", a.flop_ideal, b.flop_ideal));
        }
        let gap = (final_val(&dl) - final_val(&sl)).abs();
        if gap < 0.05 {
            close += 1;
        }
        rows.push(format!(
            "seed {seed}: doped {:.4} skeleton {:.4}",
            final_val(&dl),
            final_val(&sl)
        ));
    }
    check(
        close >= 2 && cd.trainable == cs.trainable && cd.frozen > 0,
        format!(
            "N_t {} both, N_f {}, equal ideal compute; within 0.05 nats in {close}/3 seeds; {}",
            cd.trainable,
            cd.frozen,
            rows.join(", ")
        ),
    )
}

fn determinism_and_resume() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut model = ModelConfig::dense(3, 32, 4, 32);
    model.doped_layout = Some("TFT".parse().expect("layout"));
    model.dropout = 0.1;
    model.attn_dropout = 0.1;
    model.seed = 21;
    let bt = 4 * 32;
    let cfg = |name: &str| ExperimentConfig {
        model: model.clone(),
        schedule: TrainSchedule::new(2e-3, 5 * bt, 40 * bt, 40 * bt),
        data: DataSection::synthetic(200_000, 5),
        run: RunSection {
            seed: 21,
            out_dir: dir.path().join(name),
            batch_size: 4,
            eval_interval: 5,
            val_batches: 2,
            steps: None,
            checkpoint_interval: Some(10),
            dtype: Default::default(),
        },
    };
    let (a, b) = (cfg("a"), cfg("b"));
    let err = |e: slc_core::Error| e.to_string();
    run_training(&a, None, |_| {}).map_err(err)?;
    run_training(&b, None, |_| {}).map_err(err)?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    let log_a = read(&a.run.out_dir.join("run.csv"))?;
    let same_log = log_a == read(&b.run.out_dir.join("run.csv"))?;
    // resume b from a's step-10 checkpoint: 30 more steps
    run_training(&b, Some(&checkpoint_path(&a.run.out_dir, 10)), |_| {}).map_err(err)?;
    let resumed_log = read(&b.run.out_dir.join("run.csv"))? == log_a;
    let end = checkpoint_path(&a.run.out_dir, 40);
    let resumed_state = read(&end)? == read(&checkpoint_path(&b.run.out_dir, 40))?;
    check(
        same_log && resumed_log && resumed_state,
        format!(
            "repeat run.csv identical: {same_log}; resumed at step 10 for 30 steps: run.csv identical {resumed_log}, final checkpoint identical {resumed_state}"
        ),
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    /// Correctness criteria fail the process; empirical ones only report.
    gate: bool,
    run: fn() -> Verdict,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "transform oracles",
        limit: secs(10),
        gate: true,
        run: transform_oracles,
    },
    Criterion {
        id: 2,
        name: "gradient suite",
        limit: secs(120),
        gate: true,
        run: gradient_suite,
    },
    Criterion {
        id: 3,
        name: "frozen immutability",
        limit: secs(120),
        gate: true,
        run: frozen_immutability,
    },
    Criterion {
        id: 4,
        name: "census exactness",
        limit: secs(1),
        gate: true,
        run: census_exactness,
    },
    Criterion {
        id: 5,
        name: "budget exactness",
        limit: secs(300),
        gate: true,
        run: budget_exactness,
    },
    Criterion {
        id: 6,
        name: "fit recovery",
        limit: secs(10),
        gate: true,
        run: fit_recovery,
    },
    Criterion {
        id: 7,
        name: "desk-scale scaling envelope",
        limit: secs(7200),
        gate: false,
        run: desk_scaling,
    },
    Criterion {
        id: 8,
        name: "structured models cannot cheat",
        limit: secs(10800),
        gate: false,
        run: cannot_cheat,
    },
    Criterion {
        id: 9,
        name: "free doping",
        limit: secs(7200),
        gate: false,
        run: free_doping,
    },
    Criterion {
        id: 10,
        name: "determinism and resume",
        limit: secs(300),
        gate: true,
        run: determinism_and_resume,
    },
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= c.limit;
        let (ok, detail) = match verdict {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok && c.gate {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {}: {detail} [{:.1}s, limit {}s{}]",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
        if !ok && !c.gate {
            println!(
                "     criterion {:>2} is an empirical outcome and does not fail the suite",
                c.id
            );
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
