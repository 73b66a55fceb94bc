use clap::{Parser, Subcommand, ValueEnum};
use hamflow_cli::commands::{self, SampleArgs};
use hamflow_cli::validate::{self, Level};
use hamflow_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Hamiltonian velocity predictors, score matching, and generative flows
/// on analytic Gaussian-mixture fixtures.
#[derive(Parser)]
#[command(name = "hamflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a velocity predictor for the configured flow.
    TrainHvp {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint, loss CSV, and metadata.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the training iteration count.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Min-max training of a force field against its velocity predictor.
    TrainHsm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample by backward integration of the velocity-predictor ODE.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Trained predictor checkpoint (omit with --oracle).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use the closed-form conditional velocity instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        /// Backward integration steps.
        #[arg(long, default_value_t = 64)]
        steps: usize,
        /// Number of samples.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the built-in validation suite.
    Validate {
        #[arg(long, value_enum, default_value_t = LevelArg::Fast)]
        level: LevelArg,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for the full-level diagnostic tables
        /// (taylor.csv, correlation.csv, snr.csv).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Score a sample CSV against the analytic mixture.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } | Error::TrainingDiverged { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    // Worker count for the data-parallel parts (simulation pools,
    // sampling); defaults to the available cores.
    if let Ok(threads) = std::env::var("HAMFLOW_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .ok();
        }
    }

    let cli = Cli::parse();
    let result: Result<u8, Error> = match cli.command {
        Command::TrainHvp { config, out, seed, iterations } => {
            commands::train_hvp(&config, &out, seed, iterations).map(|()| 0)
        }
        Command::TrainHsm { config, out, seed } => {
            commands::train_hsm(&config, &out, seed).map(|()| 0)
        }
        Command::Sample { config, checkpoint, oracle, steps, n, seed, out } => {
            commands::sample(&SampleArgs {
                config,
                checkpoint,
                oracle,
                steps,
                n,
                seed,
                out_dir: out,
            })
            .map(|()| 0)
        }
        Command::Validate { level, out, diagnostics } => {
            let report = validate::run_with_artifacts(
                match level {
                    LevelArg::Fast => Level::Fast,
                    LevelArg::Full => Level::Full,
                },
                diagnostics.as_deref(),
            );
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, &json) {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                }
                None => println!("{json}"),
            }
            Ok(if report.all_passed { 0 } else { EXIT_VALIDATION })
        }
        Command::Eval { samples, config, out, seed } => {
            commands::eval(&samples, &config, out.as_deref(), seed).map(|_| 0)
        }
    };

    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
