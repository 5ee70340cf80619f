//! `slc`: train presets, count parameters, fit scaling laws and write
//! experiment recipes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slc_core::accounting::CostScenario;
use slc_core::data::{synthesize, SynthConfig};
use slc_core::experiment::{
    census_report, fit_runs, run_training, write_fit, write_recipe, ExperimentConfig, FitOptions,
};
use slc_core::scalefit::LossColumn;

#[derive(Parser)]
#[command(
    name = "slc",
    version,
    about = "Scaling-law workbench for small byte-level transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the run described by a config into its output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Only print the final summary.
        #[arg(long)]
        quiet: bool,
    },
    /// Print parameter counts and FLOP budgets without training.
    Census {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit a power law to the lower envelope of run logs.
    Fit {
        /// Glob of run.csv files, e.g. 'runs/*/run.csv'.
        pattern: String,
        #[arg(long, value_parser = parse_cost)]
        cost: CostScenario,
        /// Drop points below this fraction of each run's final compute.
        #[arg(long, default_value_t = 0.05)]
        floor: f64,
        /// Loss column: val or train.
        #[arg(long, default_value = "val", value_parser = parse_loss)]
        loss: LossColumn,
        /// Also fit every run on its own.
        #[arg(long)]
        per_run: bool,
        /// Fit an irreducible-loss offset as well.
        #[arg(long)]
        offset: bool,
        /// Directory for fit.txt and the curve files [default: fit-<cost>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configs of a figure's comparison at a reduced scale.
    Recipe {
        name: String,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic text corpus.
    Corpus {
        #[arg(long)]
        bytes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_cost(s: &str) -> Result<CostScenario, String> {
    s.parse().map_err(|e: slc_core::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossColumn, String> {
    s.parse().map_err(|e: slc_core::Error| e.to_string())
}

enum Failure {
    Core(slc_core::Error),
    Other(&'static str, String),
}

impl From<slc_core::Error> for Failure {
    fn from(e: slc_core::Error) -> Self {
        Failure::Core(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, resume, quiet } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_training(&cfg, resume.as_deref(), |row| {
                if let (false, Some(v)) = (quiet, row.val_loss) {
                    eprintln!(
                        "step {} tokens {} train {:.4} val {:.4} lr {:.3e}",
                        row.step, row.tokens, row.train_loss, v, row.lr
                    );
                }
            })?;
            println!("out_dir={}", summary.out_dir.display());
            println!("steps={}", summary.steps);
            if let Some(last) = summary.last {
                println!("train_loss={}", last.train_loss);
                if let Some(v) = last.val_loss {
                    println!("val_loss={v}");
                }
            }
        }
        Command::Census { config } => {
            print!("{}", census_report(&ExperimentConfig::load(&config)?)?);
        }
        Command::Fit {
            pattern,
            cost,
            floor,
            loss,
            per_run,
            offset,
            out,
        } => {
            let mut paths: Vec<PathBuf> = glob::glob(&pattern)
                .map_err(|e| Failure::Other("usage", format!("bad glob {pattern:?}: {e}")))?
                .collect::<Result<_, _>>()
                .map_err(|e| Failure::Other("io", e.to_string()))?;
            paths.sort();
            if paths.is_empty() {
                return Err(Failure::Other("usage", format!("no files match {pattern:?}")));
            }
            let opts = FitOptions {
                cost,
                loss,
                floor,
                per_run,
                offset,
            };
            let outcome = fit_runs(&paths, &opts)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(format!("fit-{cost}")));
            write_fit(&outcome, &dir)?;
            print!("{}", outcome.report);
            println!("out_dir={}", dir.display());
        }
        Command::Recipe { name, scale, out } => {
            for p in write_recipe(&name, scale, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Corpus { bytes, seed, out } => {
            let text = synthesize(&SynthConfig::new(bytes, seed));
            std::fs::write(&out, text).map_err(|e| Failure::Other("io", format!("{}: {e}", out.display())))?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(if matches!(e, slc_core::Error::Diverged { .. }) {
                3
            } else {
                1
            })
        }
        Err(Failure::Other(kind, msg)) => {
            eprintln!("error[{kind}]: {}", one_line(&msg));
            ExitCode::FAILURE
        }
    }
}
