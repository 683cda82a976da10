//! Command-line experiment runner.
//!
//! Four subcommands: `run` executes a configured experiment across its
//! seeds, `sweep` repeats it along one axis, `efficiency` times one
//! adaptation epoch per regime against full fine-tuning, and `plot` renders
//! previously written reports to CSV and SVG.
//!
//! Exit codes are a stable contract: 0 on success, 1 on runtime failure
//! (the message carries a pipeline stage tag), 2 on config errors (the
//! message carries the offending field's dotted path).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tiglab::config::ExperimentConfig;
use tiglab::error::{Error, Result};
use tiglab::report::{
    emit_plots, load_reports_under, report_efficiency, run_experiment, sweep, PlotKind,
};

#[derive(Parser)]
#[command(
    name = "tiglab",
    version,
    about = "Temporal interaction graph lab: pre-train a memory backbone, adapt it with prompts"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured experiment once per seed and aggregate.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list (repeat the flag per seed).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat the experiment along one axis with shared seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: prompt_fraction, prompt_dim, pretrain_fraction.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. `0.05,0.1,0.2`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Time one adaptation epoch per regime and count trainable scalars.
    Efficiency {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render reports found under a directory to CSV (and best-effort SVG).
    Plot {
        /// Directory holding `report.json` files (directly or one level
        /// down, as sweeps write them).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotArg {
    /// Line of headline metric against the swept value.
    Sweep,
    /// One bar per report.
    Comparison,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for config errors (wherever they surface), 1 for everything else.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidConfig { .. } => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { config, seeds, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !seeds.is_empty() {
                cfg.run.seeds = seeds;
            }
            if let Some(dir) = out {
                cfg.run.out_dir = dir;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.render_text());
            println!("artifacts under {}", cfg.run.out_dir.display());
        }
        Cmd::Sweep {
            config,
            axis,
            values,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let reports = sweep(&cfg, &axis, &values)?;
            for r in &reports {
                let (_, v) = r.axis.as_ref().expect("sweep reports carry their axis");
                println!("{axis} = {v}: headline {}", r.headline.display());
            }
            println!(
                "combined csv: {}",
                cfg.run.out_dir.join(format!("sweep_{axis}.csv")).display()
            );
        }
        Cmd::Efficiency { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = report_efficiency(&cfg)?;
            print!("{}", report.render_text());
            println!("written to {}", cfg.run.out_dir.join("efficiency.csv").display());
        }
        Cmd::Plot { input, kind } => {
            let reports = load_reports_under(&input)?;
            let kind = match kind {
                PlotArg::Sweep => PlotKind::Sweep,
                PlotArg::Comparison => PlotKind::Comparison,
            };
            let files = emit_plots(&reports, kind, &input)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}
