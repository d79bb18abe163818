use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use favsite_cli::acceptance::{acceptance, AcceptanceOpts};
use favsite_cli::config::{ExperimentConfig, Overrides};
use favsite_cli::run::{run, RunOptions};

/// Monte Carlo laboratory for biased walks on Galton-Watson trees.
#[derive(Parser)]
#[command(name = "favsite", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Master seed; replaces the one in the configuration.
    #[arg(long, global = true, env = "FAVSITE_SEED")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "FAVSITE_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "FAVSITE_OUT")]
    out: Option<PathBuf>,
    /// Per-replica budget (vertices, steps or generations, depending on the experiment).
    #[arg(long, global = true, env = "FAVSITE_BUDGET_STEPS")]
    budget_steps: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long, env = "FAVSITE_CONFIG")]
        config: PathBuf,
    },
    /// Run the acceptance matrix.
    Acceptance {
        #[arg(long, env = "FAVSITE_CONFIG_DIR", default_value = "configs/acceptance")]
        config_dir: PathBuf,
        /// Comma-separated criterion numbers.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let g = cli.global;
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply(&Overrides {
                seed: g.seed,
                workers: g.workers,
                out: g.out,
                budget_steps: g.budget_steps,
            });
            cfg.validate().context("after overrides")?;
            let o = run(&cfg, &RunOptions::default())?;
            println!("{}", serde_json::to_string_pretty(&o.summary)?);
            Ok(true)
        }
        Command::Acceptance { config_dir, only } => {
            let opts = AcceptanceOpts {
                only,
                fault: None,
                out: g.out,
                overrides: Overrides {
                    seed: g.seed,
                    workers: g.workers,
                    out: None,
                    budget_steps: g.budget_steps,
                },
            };
            let report = acceptance(&config_dir, &opts)?;
            print!("{}", report.render());
            println!("{}", if report.pass { "all criteria pass" } else { "some criteria fail" });
            Ok(report.pass)
        }
    }
}
