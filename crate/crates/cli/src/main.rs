//! `sublap`: runs the sub-network Laplace experiment suites from a TOML
//! configuration and writes per-seed JSON shards plus aggregate CSV tables.
//!
//! Exit codes: 0 success, 2 configuration/ingestion error, 3 numeric or
//! runtime failure, 4 theory falsification.

mod config;
mod experiments;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, ExperimentKind};
use experiments::RunError;

#[derive(Parser)]
#[command(
    name = "sublap",
    about = "Sub-network Laplace experiment runner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predictive standard-deviation gap between full and subset posteriors.
    Wasserstein(RunArgs),
    /// Credible-interval coverage against an oracle target.
    Coverage(RunArgs),
    /// Brute-force verification of the predictive-variance orderings.
    Theory(RunArgs),
    /// Wheel-bandit Thompson sampling regret comparison.
    Bandit(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the seed fan-out.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Wasserstein(_) => ExperimentKind::Wasserstein,
            Command::Coverage(_) => ExperimentKind::Coverage,
            Command::Theory(_) => ExperimentKind::Theory,
            Command::Bandit(_) => ExperimentKind::Bandit,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Wasserstein(a)
            | Command::Coverage(a)
            | Command::Theory(a)
            | Command::Bandit(a) => a,
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let args = cli.command.args();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != cli.command.kind() {
        return Err(RunError::Config(config::ConfigError(format!(
            "config declares experiment '{}' but the '{}' subcommand was invoked",
            cfg.experiment,
            cli.command.kind()
        ))));
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;

    if args.jobs == 0 {
        return Err(RunError::Config(config::ConfigError(
            "--jobs must be at least 1".into(),
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| RunError::Config(config::ConfigError(format!("thread pool: {e}"))))?;
    pool.install(|| experiments::run(&cfg))
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
