//! Command-line front end.
//!
//! Without a subcommand the tool runs the strategy × seed matrix and then
//! writes `summary.csv`. Exit codes: 0 success, 1 run failure, 2 config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use samosa_core::alcore::{Experiment, ExperimentConfig};
use samosa_core::strategies::StrategyKind;

use crate::config::{self, ConfigError};
use crate::output::{patches_csv, pool_csv, write_atomic};
use crate::runner::{run_matrix, summarize, RunManifest};

pub const EXIT_RUN_FAILURE: u8 = 1;
pub const EXIT_CONFIG_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "samosa-lab", version, about = "Open-set active learning on synthetic patch data")]
#[command(args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate final-round accuracy of completed runs into summary.csv.
    Summarize {
        /// Output directory of a previous run.
        dir: PathBuf,
    },
    /// Write the generated pool (ids, classes, splits) for one seed.
    ExportPool {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write every patch vector to patches.csv.
        #[arg(long)]
        patches: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<String>,
    /// A seed count `n` (seeds seed..seed+n) or a comma-separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub mismatch: Option<f64>,
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

pub fn parse_seeds(arg: &str, base: u64) -> Result<Vec<u64>, ConfigError> {
    let bad = |_| invalid("seeds", format!("expected a count or a comma-separated list, got `{arg}`"));
    if arg.contains(',') {
        let seeds = arg
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<u64>().map_err(bad))
            .collect::<Result<Vec<_>, _>>()?;
        if seeds.is_empty() {
            return Err(invalid("seeds", "empty seed list"));
        }
        return Ok(seeds);
    }
    let n: u64 = arg.trim().parse().map_err(bad)?;
    if n == 0 {
        return Err(invalid("seeds", "seed count must be at least 1"));
    }
    Ok((base..base + n).collect())
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    match path {
        Some(p) => config::parse_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Applies flag overrides on top of the config file.
pub fn build_manifest(args: &RunArgs) -> Result<RunManifest, ConfigError> {
    let mut file = config::FileConfig::from(&load(args.config.as_deref())?);
    if let Some(r) = args.rounds {
        file.rounds = r;
    }
    if let Some(b) = args.budget {
        file.budget = b;
    }
    if let Some(m) = args.mismatch {
        file.mismatch_ratio = m;
    }
    let cfg = file.resolve()?;
    let strategies: Vec<StrategyKind> = if args.strategy.is_empty() {
        vec![cfg.strategy]
    } else {
        args.strategy
            .iter()
            .map(|s| {
                let kind: StrategyKind =
                    s.trim().parse().map_err(|_| invalid("strategy", format!("unknown strategy `{s}`")))?;
                kind.validate().map_err(|e| invalid("strategy", e.to_string()))?;
                Ok(kind)
            })
            .collect::<Result<_, ConfigError>>()?
    };
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s, cfg.seed)?,
        None => vec![cfg.seed],
    };
    Ok(RunManifest::new(&cfg, &strategies, &seeds, &args.out))
}

fn export_pool(config: Option<&Path>, seed: u64, out: &Path, patches: bool) -> Result<(), String> {
    let cfg = ExperimentConfig { seed, ..load(config).map_err(|e| e.to_string())? };
    let exp = Experiment::new(cfg).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let write = |name: &str, bytes: std::io::Result<Vec<u8>>| {
        let path = out.join(name);
        bytes.and_then(|b| write_atomic(&path, &b)).map_err(|e| format!("{}: {e}", path.display()))
    };
    write("pool.csv", pool_csv(exp.examples(), exp.state()))?;
    if patches {
        write("patches.csv", patches_csv(exp.examples()))?;
    }
    Ok(())
}

pub fn main(cli: Cli) -> ExitCode {
    match cli.command {
        Some(Command::Summarize { dir }) => match summarize(&dir) {
            Ok(rows) => {
                for r in rows {
                    println!(
                        "{:<12} runs {} acc {:.4} ± {:.4} rank {:.2}",
                        r.strategy, r.runs, r.mean_accuracy, r.std_accuracy, r.avg_rank
                    );
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_RUN_FAILURE)
            }
        },
        Some(Command::ExportPool { config, seed, out, patches }) => {
            if let Some(p) = &config {
                if let Err(e) = config::parse_config(p) {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG_ERROR);
                }
            }
            match export_pool(config.as_deref(), seed, &out, patches) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUN_FAILURE)
                }
            }
        }
        None => {
            let manifest = match build_manifest(&cli.run) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG_ERROR);
                }
            };
            let results = match run_matrix(&manifest) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_RUN_FAILURE);
                }
            };
            let mut failed = false;
            for c in &results {
                match &c.result {
                    Ok(m) => {
                        let last = m.last().expect("at least one round");
                        eprintln!("{} seed {}: accuracy {:.4} recall {:.4}", c.strategy, c.seed, last.accuracy, last.recall);
                    }
                    Err(e) => {
                        failed = true;
                        eprintln!("FAILED {e}");
                    }
                }
            }
            if let Err(e) = summarize(&manifest.out_dir) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_RUN_FAILURE);
            }
            if failed {
                ExitCode::from(EXIT_RUN_FAILURE)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
