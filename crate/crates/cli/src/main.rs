//! `ambiprune`: assess, quantify, inspect and prune ambiguous annotations.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use ambiprune_core::eval::{DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use ambiprune_core::io::{DatasetFormat, DEFAULT_IDENTITY};
use ambiprune_core::prune::PruneMode;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ambiprune", version, about)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Dataset file, or an ECP directory with --format ecp
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long, default_value = "native")]
    pub format: DatasetFormat,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute ambiguity scores and write the scored dataset
    Score {
        #[command(flatten)]
        input: InputArgs,
        /// JSONL file of precomputed scores or answer counts
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Recompute scores that are already present
        #[arg(long)]
        overwrite: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write the ambiguity histogram and tag-proportion plots, list the most ambiguous instances
    Report {
        #[command(flatten)]
        input: InputArgs,
        /// Output directory
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = ambiprune_core::ambiguity::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Remove instances with ambiguity at or above a threshold
    Prune {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        threshold: f64,
        #[arg(long, default_value = "ignore")]
        mode: PruneMode,
        #[arg(long)]
        output: PathBuf,
        /// Representativeness report (default: <output>.report.json)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate detections against the dataset
    Eval {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        eval: EvalArgs,
        /// Ignore-prune in memory at this threshold before evaluating
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the HTTP API over a scored dataset
    Serve {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_IDENTITY)]
        identity: String,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Allowed browser origin, e.g. http://localhost:5173
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Detections as JSON lines
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value = "reasonable")]
    pub subset: String,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD)]
    pub conf: f64,
    #[arg(long, default_value = DEFAULT_IDENTITY)]
    pub identity: String,
}

/// 2 for failures of the environment, 1 for bad input or parameters.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ambiprune_core::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        anyhow::ensure!(jobs >= 1, "--jobs must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| anyhow::anyhow!("cannot size worker pool: {e}"))?;
    }
    match cli.command {
        Command::Score {
            input,
            scores,
            overwrite,
            output,
        } => commands::score(&input, scores.as_deref(), overwrite, &output),
        Command::Report {
            input,
            output,
            bins,
            top,
        } => commands::report(&input, &output, bins, top),
        Command::Prune {
            input,
            threshold,
            mode,
            output,
            report,
        } => {
            let report = report.unwrap_or_else(|| {
                let mut name = output.file_stem().unwrap_or_default().to_os_string();
                name.push(".report.json");
                output.with_file_name(name)
            });
            commands::prune(&input, threshold, mode, &output, &report)
        }
        Command::Eval {
            input,
            eval,
            threshold,
            output,
        } => commands::eval(&input, &eval, threshold, output.as_deref()),
        Command::Serve {
            input,
            detections,
            identity,
            host,
            port,
            cors_origin,
        } => commands::serve(
            &input,
            detections.as_deref(),
            &identity,
            &host,
            port,
            cors_origin.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AMBIPRUNE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
