//! `dsm`: run experiments and checks from TOML configs.
//!
//! Exit codes: 0 success, 1 configuration or IO error, 2 numerical abort,
//! 3 failed check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsm_harness::checks::{check_determinism, check_lemma1, check_oracles, check_reductions};
use dsm_harness::config::TraceFormat;
use dsm_harness::experiment::format_summary;
use dsm_harness::{check_experiment, run_experiment, CheckReport, ExperimentSpec, HarnessError, RunOptions};

#[derive(Parser)]
#[command(name = "dsm", version, about = "Distributed sign momentum experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Base seed, replacing `algorithm.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace format, replacing `output.formats`.
    #[arg(long, value_parser = parse_format)]
    format: Option<TraceFormat>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Threads for the workers of each round; 1 runs them in order.
    #[arg(long, default_value_t = 1)]
    worker_threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// One cell per variant label at `algorithm.rounds` with the base seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Every (variant, rounds, seed) cell of the sweep, then the summary table.
    /// A `[check]` block is evaluated afterwards.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Monte Carlo check of the randomized sign operators.
    CheckLemma1 {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Engine reductions against the reference loops.
    CheckReductions {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a config and evaluates its `[check]` block.
    CheckTheorems {
        config: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
    /// Finite-difference check of the gradient oracles.
    CheckOracles {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reruns a config sequentially and in parallel and compares the trace files byte for byte.
    CheckDeterminism {
        config: PathBuf,
        #[command(flatten)]
        o: Overrides,
    },
}

fn parse_format(s: &str) -> Result<TraceFormat, String> {
    match s {
        "csv" => Ok(TraceFormat::Csv),
        "jsonl" => Ok(TraceFormat::Jsonl),
        other => Err(format!("unknown format `{other}`; expected csv or jsonl")),
    }
}

fn load(config: &PathBuf, o: &Overrides) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = ExperimentSpec::load(config)?;
    if let Some(seed) = o.seed {
        spec.algorithm.seed = seed;
    }
    if let Some(out) = &o.out {
        spec.output.dir = out.display().to_string();
    }
    if let Some(f) = o.format {
        spec.output.formats = vec![f];
    }
    Ok(spec)
}

fn options(o: &Overrides) -> RunOptions {
    RunOptions {
        jobs: o.jobs.max(1),
        worker_threads: o.worker_threads.max(1),
        write_traces: true,
    }
}

fn finish(report: CheckReport, out: Option<&PathBuf>) -> Result<(), HarnessError> {
    for line in &report.lines {
        println!("{line}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join(format!("{}.json", report.name));
        std::fs::write(&path, serde_json::to_string_pretty(&report.json).expect("json"))
            .map_err(|e| HarnessError::io(&path, e))?;
    }
    if report.passed {
        println!("{}: PASS", report.name);
        Ok(())
    } else {
        println!("{}: FAIL", report.name);
        Err(HarnessError::CheckFailed(report.name))
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, o } => {
            let mut spec = load(&config, &o)?;
            spec.sweep = Some(dsm_harness::config::SweepBlock {
                variants: spec.sweep().variants,
                ..Default::default()
            });
            spec.check = None;
            let report = run_experiment(&spec, &options(&o))?;
            print!("{}", format_summary(&report.summary));
            Ok(())
        }
        Command::Sweep { config, o } => {
            let spec = load(&config, &o)?;
            if spec.check.is_some() {
                let report = check_experiment(&spec, &options(&o))?;
                let summary = std::fs::read_to_string(PathBuf::from(&spec.output.dir).join("summary.csv"))
                    .unwrap_or_default();
                print!("{summary}");
                finish(report, None)
            } else {
                let report = run_experiment(&spec, &options(&o))?;
                print!("{}", format_summary(&report.summary));
                Ok(())
            }
        }
        Command::CheckLemma1 { seed, draws, out } => finish(check_lemma1(seed, 10, draws), out.as_ref()),
        Command::CheckReductions { out } => finish(check_reductions()?, out.as_ref()),
        Command::CheckTheorems { config, o } => {
            let spec = load(&config, &o)?;
            finish(check_experiment(&spec, &options(&o))?, None)
        }
        Command::CheckOracles { seed, points, out } => finish(check_oracles(seed, points), out.as_ref()),
        Command::CheckDeterminism { config, o } => {
            let spec = load(&config, &o)?;
            finish(check_determinism(&spec, o.jobs.max(1), o.worker_threads.max(4))?, None)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are configuration errors; help and version are not errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, HarnessError::CheckFailed(_)) {
                eprintln!("dsm: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
