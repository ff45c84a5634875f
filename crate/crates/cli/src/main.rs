//! `semloc`: semantic graph global localization from the command line.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Output;
use config::{FlagOverrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "semloc", version, about = "Semantic-histogram graph matching for global localization")]
struct Cli {
    #[command(flatten)]
    flags: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalFlags {
    /// key = value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything serially
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Edge distance threshold, meters
    #[arg(long, global = true, value_name = "M")]
    connectivity: Option<f64>,
    /// Minimum descriptor similarity for a candidate match
    #[arg(long, global = true, value_name = "X")]
    score_threshold: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    ransac_iters: Option<usize>,
    /// RANSAC inlier residual bound, meters
    #[arg(long, global = true, value_name = "M")]
    ransac_tol: Option<f64>,
    #[arg(long, global = true, value_enum)]
    descriptor: Option<DescriptorKind>,
    /// Labels (names or ids) removed before graph construction
    #[arg(long, global = true, value_delimiter = ',', value_name = "a,b")]
    drop_labels: Option<Vec<String>>,
    /// Directory for output files
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DescriptorKind {
    Histogram,
    Neighbor,
    Walk,
}

impl DescriptorKind {
    fn name(self) -> &'static str {
        match self {
            Self::Histogram => "histogram",
            Self::Neighbor => "neighbor",
            Self::Walk => "walk",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the transform taking the query map into the reference map
    Localize {
        /// Reference map: graph JSON or point file
        #[arg(long)]
        reference: PathBuf,
        /// Query map: graph JSON or point file
        #[arg(long)]
        query: PathBuf,
        /// Known query → reference transform JSON, for error and good-match reporting
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Cluster a point file (or re-merge a graph) and dump the graph and descriptors
    Extract {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic scene and two robot observations of it
    Synth,
    /// Precision/recall over synthetic localization attempts
    EvalPr,
    /// Per-stage timing over repeated runs (synthetic unless inputs are given)
    Bench {
        #[arg(long, requires = "query")]
        reference: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        query: Option<PathBuf>,
    },
    /// Print the effective configuration
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let f = &cli.flags;
    let file = f.config.as_ref().map(|p| std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))).transpose()?;
    let overrides = FlagOverrides {
        seed: f.seed,
        connectivity: f.connectivity,
        score_threshold: f.score_threshold,
        ransac_iters: f.ransac_iters,
        ransac_tol: f.ransac_tol,
        descriptor: f.descriptor.map(|d| d.name().to_string()),
        drop_labels: f.drop_labels.clone(),
    };
    let cfg = RunConfig::from_layers(file.as_deref(), &overrides)?;
    log::debug!("effective configuration:\n{}", cfg.to_text());

    // Timing runs stay single-threaded unless asked otherwise.
    let threads = f.threads.or(matches!(cli.command, Command::Bench { .. }).then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Other(e.to_string()))?;
    }

    if let Command::Config = cli.command {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let out = Output::create(&f.output)?;
    match &cli.command {
        Command::Localize { reference, query, ground_truth } => commands::localize(&cfg, reference, query, ground_truth.as_deref(), &out),
        Command::Extract { input } => commands::extract(&cfg, input, &out),
        Command::Synth => commands::synth(&cfg, &out),
        Command::EvalPr => commands::eval_pr(&cfg, &out),
        Command::Bench { reference, query } => commands::bench_cmd(&cfg, reference.as_deref().zip(query.as_deref()), &out),
        Command::Config => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEMLOC_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.code() as u8)
        }
    }
}
