use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use xsam_core::harness::{
    self, compare_ledgers, run_oracle, run_probe, run_training, run_trajectory, write_probe, write_training,
    write_trajectory, ExperimentConfig,
};
use xsam_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
struct Flags {
    /// Experiment JSON: one object, or an array for a batch.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the experiment seed (also reseeds the optimizer and oracle).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; batch experiments run concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Parser)]
#[command(name = "xsam", version, about = "Sharpness-aware optimization experiments")]
struct App {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Optimizer trajectory on a 2D analytic surface.
    Trajectory(Flags),
    /// Minibatch MLP training.
    Train(Flags),
    /// Landscape probes around a point or checkpoint.
    Probe(Flags),
    /// Randomized quadratic verification batch.
    Verify(Flags),
    /// Pass counts of the configured rule against SAM.
    Ledger(Flags),
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => EXIT_VERIFY,
            Failure::Core(e) => match e {
                Error::Config(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::InvalidArgument(_)
                | Error::DimensionMismatch { .. }
                | Error::RejectedTrial(_) => EXIT_CONFIG,
                _ => EXIT_NUMERIC,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

fn run_one(kind: &str, cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<String, Failure> {
    for w in cfg.validate()? {
        if !quiet {
            eprintln!("warning [{}]: {w}", cfg.name);
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    harness::io::write_json(&out.join("config.json"), cfg)?;
    let summary = match kind {
        "trajectory" => {
            let run = run_trajectory(cfg)?;
            write_trajectory(out, &run)?;
            let end = run.endpoint();
            format!(
                "endpoint ({}, {}) loss {} forwards {} backwards {}",
                end[0],
                end[1],
                run.losses.last().unwrap(),
                run.ledger.forwards,
                run.ledger.backwards
            )
        }
        "train" => {
            let run = run_training(cfg, Some(out))?;
            write_training(out, cfg, &run)?;
            let last = run.metrics.last();
            format!(
                "epochs {} train_loss {} train_acc {} forwards {} backwards {}",
                run.metrics.len(),
                last.map_or(f64::NAN, |m| m.train_loss),
                last.map_or(f64::NAN, |m| m.train_acc),
                run.ledger.forwards,
                run.ledger.backwards
            )
        }
        "probe" => {
            let run = run_probe(cfg)?;
            write_probe(out, &run)?;
            for n in &run.notes {
                if !quiet {
                    eprintln!("note [{}]: {n}", cfg.name);
                }
            }
            format!("probes {} notes {}", cfg.probes.len(), run.notes.len())
        }
        "verify" => {
            let rep = run_oracle(cfg)?;
            harness::io::write_json(&out.join("oracle_report.json"), &rep)?;
            let line = format!(
                "trials {} valid {} rejected {} verified {} part1 {} part2 {} sign_terms {}",
                rep.trials,
                rep.valid,
                rep.rejected,
                rep.verified,
                rep.part1_verified,
                rep.part2_witnessed,
                rep.sign_terms_ok
            );
            if !rep.all_verified() {
                return Err(Failure::Verification(line));
            }
            line
        }
        "ledger" => {
            let cmp = compare_ledgers(cfg)?;
            harness::io::write_json(&out.join("ledger_comparison.json"), &cmp)?;
            format!(
                "{} vs sam: extra forwards {} extra backwards {} overhead {}",
                cmp.rule, cmp.extra_forwards, cmp.extra_backwards, cmp.overhead
            )
        }
        _ => unreachable!("subcommand names are fixed"),
    };
    Ok(summary)
}

fn main() -> ExitCode {
    let app = App::parse();
    let (kind, flags) = match app.command {
        Sub::Trajectory(f) => ("trajectory", f),
        Sub::Train(f) => ("train", f),
        Sub::Probe(f) => ("probe", f),
        Sub::Verify(f) => ("verify", f),
        Sub::Ledger(f) => ("ledger", f),
    };
    match execute(kind, &flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn execute(kind: &str, flags: &Flags) -> Result<(), Failure> {
    let mut configs = ExperimentConfig::load(&flags.config)?;
    if let Some(seed) = flags.seed {
        configs = configs.into_iter().map(|c| c.with_seed(seed)).collect();
    }
    let mut names: Vec<&str> = configs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("batch experiments need distinct names".into()).into());
    }
    let batch = configs.len() > 1;
    let out_for = |c: &ExperimentConfig| {
        let base = flags.out.clone().unwrap_or_else(|| c.output_dir.clone());
        if batch {
            base.join(&c.name)
        } else {
            base
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = flags.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(String, Result<String, Failure>)> = pool
        .install(|| configs.par_iter().map(|c| (c.name.clone(), run_one(kind, c, &out_for(c), flags.quiet))).collect());
    let mut worst: Option<Failure> = None;
    for (name, r) in results {
        match r {
            Ok(line) => {
                if !flags.quiet {
                    println!("{name}: {line}");
                }
            }
            Err(f) => {
                eprintln!("{name}: {f}");
                if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                    worst = Some(f);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}
