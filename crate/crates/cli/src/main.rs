use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use naht_cli::commands::{self, EvalMode};
use naht_cli::config::RunConfig;
use naht_cli::lemmas::{lemma_csv, lemma_table, Formulas};
use naht_core::registry::Registry;

#[derive(Parser)]
#[command(name = "naht", version, about = "N-agent ad hoc teamwork laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seeds with this one (or set NAHT_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or set NAHT_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply_overrides(self.seed, self.out.clone())?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured variant for every seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Suppress the per-iteration progress line.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate checkpoints and write a CSV into the output directory.
    Eval {
        #[command(flatten)]
        common: Common,
        /// mn, xp, ood, varyn or eddiag.
        #[arg(long)]
        mode: String,
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Print the matrix-game lemma table; fails if any row disagrees.
    Lemmas,
    /// Inspect or build the teammate registry.
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
}

#[derive(Subcommand)]
enum RegistryAction {
    /// List the entries of a registry manifest.
    List {
        path: PathBuf,
    },
    /// Train self-play teams for the configured seeds and holdout seeds.
    Build {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common, quiet } => {
            let cfg = common.load()?;
            let mut log = |seed: u64, m: &naht_core::poam::IterationMetrics| {
                if !quiet {
                    eprintln!(
                        "seed {seed} iter {} steps {} return {:.3}",
                        m.iteration, m.env_steps, m.mean_return
                    );
                }
            };
            let manifest = commands::train(&cfg, &mut log)?;
            println!("{}", cfg.out_dir.join("manifest.json").display());
            for s in &manifest.seeds {
                println!("{}", s.final_checkpoint.display());
            }
            Ok(true)
        }
        Command::Eval {
            common,
            mode,
            checkpoints,
            episodes,
        } => {
            let cfg = common.load()?;
            let path = commands::eval(&cfg, EvalMode::parse(&mode)?, &checkpoints, episodes)?;
            println!("{}", path.display());
            Ok(true)
        }
        Command::Lemmas => {
            let rows = lemma_table(&Formulas::default());
            print!("{}", lemma_csv(&rows));
            let failed: Vec<_> = rows.iter().filter(|r| !r.passed()).collect();
            for r in &failed {
                eprintln!("mismatch: {} differs by {:e}", r.quantity, r.abs_diff);
            }
            Ok(failed.is_empty())
        }
        Command::Registry { action } => match action {
            RegistryAction::List { path } => {
                let reg = Registry::load(&path).with_context(|| format!("cannot list {}", path.display()))?;
                print!("{}", commands::registry_list(&reg));
                Ok(true)
            }
            RegistryAction::Build { common } => {
                let cfg = common.load()?;
                let report = commands::registry_build(&cfg)?;
                println!("{}", report.registry.display());
                for (seed, err) in &report.failed {
                    eprintln!("seed {seed} failed: {err}");
                }
                Ok(report.failed.is_empty())
            }
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
