//! Command-line front end for the experiment runners. Each subcommand loads
//! an optional JSON config (absent fields keep the built-in defaults), runs
//! one study, and writes its CSV tables plus a JSON metadata file into
//! `--out`. Exit code 0 means the run completed; 2 means the configuration
//! was rejected or a validation assertion failed.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use ace_core::experiments::{
    run_condition_experiment, run_decay_experiment, run_invariance_check, run_purify_info,
    run_regression_experiment, run_span_check, ConditionConfig, DecayConfig, ExperimentError,
    FitConfig, InvarianceConfig, PurifyInfoConfig, SpanConfig,
};

#[derive(Parser)]
#[command(name = "ace", version, about = "cluster-expansion basis studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closure and sparsity summary of the purification operator; also
    /// exports the operator as a sparse triplet file.
    PurifyInfo(RunArgs),
    /// Scaled Gram condition numbers of the canonical and self-interacting
    /// invariant bases.
    Cond(RunArgs),
    /// Least-squares coefficient decay against Euclidean degree.
    Decay(RunArgs),
    /// Learning curves for smooth targets under grid-searched Tikhonov
    /// regularization.
    Fit(RunArgs),
    /// Invariance of the symmetrized features under random group actions;
    /// exits 2 when any residual exceeds the tolerance.
    InvarianceCheck(RunArgs),
    /// Sampled span comparison of the canonical and pooled product features.
    SpanCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; fields not present fall back to defaults.
    #[arg(long, value_name = "json")]
    config: Option<PathBuf>,
    /// Replaces the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the CSV tables and metadata.
    #[arg(long, value_name = "dir", default_value = "ace-out")]
    out: PathBuf,
    /// Worker threads for the parallel runners (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    /// Bad config or a failed validation assertion — exit 2.
    Validation(String),
    /// Could not produce the output artifacts — exit 1.
    Io(String),
}

fn classify(err: ExperimentError) -> Failure {
    match err {
        ExperimentError::Io(e) => Failure::Io(e.to_string()),
        ExperimentError::Json(e) => Failure::Io(e.to_string()),
        other => Failure::Validation(other.to_string()),
    }
}

fn load<T: DeserializeOwned + Default>(args: &RunArgs) -> Result<T, Failure> {
    match &args.config {
        None => Ok(T::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
        }
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Only the first pool wins in one process; later calls are no-ops.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn write_report(
    report: &ace_core::experiments::ExperimentReport,
    out: &Path,
) -> Result<Vec<PathBuf>, Failure> {
    report.write_to_dir(out).map_err(classify)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::PurifyInfo(args) => {
            init_threads(args.threads);
            let cfg: PurifyInfoConfig = load(&args)?;
            let outcome = run_purify_info(&cfg).map_err(classify)?;
            let mut paths = write_report(&outcome.report, &args.out)?;
            let op_path = args.out.join("purify_operator.txt");
            let file = fs::File::create(&op_path).map_err(|e| Failure::Io(e.to_string()))?;
            outcome
                .operator
                .write_triplets(BufWriter::new(file))
                .map_err(|e| Failure::Io(e.to_string()))?;
            paths.push(op_path);
            announce(&paths);
            Ok(())
        }
        Command::Cond(args) => {
            init_threads(args.threads);
            let mut cfg: ConditionConfig = load(&args)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let outcome = run_condition_experiment(&cfg).map_err(classify)?;
            announce(&write_report(&outcome.report, &args.out)?);
            Ok(())
        }
        Command::Decay(args) => {
            init_threads(args.threads);
            let mut cfg: DecayConfig = load(&args)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let outcome = run_decay_experiment(&cfg).map_err(classify)?;
            announce(&write_report(&outcome.report, &args.out)?);
            Ok(())
        }
        Command::Fit(args) => {
            init_threads(args.threads);
            let mut cfg: FitConfig = load(&args)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let outcome = run_regression_experiment(&cfg).map_err(classify)?;
            announce(&write_report(&outcome.report, &args.out)?);
            Ok(())
        }
        Command::InvarianceCheck(args) => {
            init_threads(args.threads);
            let mut cfg: InvarianceConfig = load(&args)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let outcome = run_invariance_check(&cfg).map_err(classify)?;
            announce(&write_report(&outcome.report, &args.out)?);
            if outcome.pass {
                Ok(())
            } else {
                let worst = outcome
                    .rows
                    .iter()
                    .max_by(|a, b| a.max_residual.total_cmp(&b.max_residual))
                    .expect("at least one row");
                Err(Failure::Validation(format!(
                    "invariance failed: {} {} residual {:e} exceeds {:e}",
                    worst.group, worst.basis, worst.max_residual, cfg.tolerance
                )))
            }
        }
        Command::SpanCheck(args) => {
            init_threads(args.threads);
            let mut cfg: SpanConfig = load(&args)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let outcome = run_span_check(&cfg).map_err(classify)?;
            announce(&write_report(&outcome.report, &args.out)?);
            println!(
                "spans {}",
                if outcome.check.equivalent {
                    "equivalent"
                } else {
                    "differ"
                }
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("ace: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("ace: {msg}");
            ExitCode::FAILURE
        }
    }
}
