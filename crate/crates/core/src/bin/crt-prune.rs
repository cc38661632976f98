//! Command-line front end; see `crt_prune::config` for the config schema.
//!
//! Exit codes: 0 pass, 1 validation or gate failure, 2 usage/config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crt_prune::config::{self, CliError, ExperimentConfig};
use crt_prune::SimMode;

#[derive(Parser)]
#[command(name = "crt-prune", version, about = "Marked Lévy CRT exploration and pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config's standing assumptions.
    Validate(Common),
    /// Run verification suites and write JSON/CSV reports.
    Check {
        #[command(flatten)]
        common: Common,
        /// excursion, pruned, joint, total-mass, special-markov, gw-oracle or all.
        #[arg(long, env = "CRT_PRUNE_SUITE", default_value = "all")]
        suite: String,
    },
    /// Write per-excursion samples and histograms.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, env = "CRT_PRUNE_CONFIG")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "CRT_PRUNE_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, env = "CRT_PRUNE_WORKERS")]
    workers: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long, env = "CRT_PRUNE_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "CRT_PRUNE_MODE", value_enum)]
    mode: Option<SimMode>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if let Some(mode) = self.mode {
            config.simulation.mode = mode;
        }
        if let Some(w) = self.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build_global()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Validate(common) => {
            let config = common.load()?;
            let (text, ok) = config::cmd_validate(&config);
            print!("{text}");
            Ok(ok)
        }
        Command::Check { common, suite } => {
            let config = common.load()?;
            let (table, passed) = config::cmd_check(&config, &suite, &config.output.dir)?;
            print!("{table}");
            println!("reports in {}", config.output.dir.display());
            Ok(passed)
        }
        Command::Simulate(common) => {
            let config = common.load()?;
            let n = config::cmd_simulate(&config, &config.output.dir)?;
            println!("{n} excursions written to {}", config.output.dir.join("samples.csv").display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
