//! `gate`: run GATE experiments from a TOML config.

mod config;
mod error;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gate_core::eval::SweepEntry;
use gate_core::GateError;

use config::{ExperimentConfig, Overrides};
use error::CliResult;
use stages::Experiment;

#[derive(Parser)]
#[command(name = "gate", version, about = "Graph-CCA temporal pretraining and label-efficient fine-tuning on dynamic FC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML). Defaults apply to everything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the (repeat, fold) units.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, fine-tune, report and run the configured diagnostics.
    Run,
    /// Write the synthetic cohort as a manifest with signal CSVs.
    Synth,
    /// Self-supervised pretraining of every fold; writes checkpoints.
    Pretrain,
    /// Fine-tune from pretrained checkpoints, train the baseline, report.
    Finetune,
    /// Re-score saved fine-tuned checkpoints.
    Evaluate,
    /// `run` at the given label rates.
    Sweep {
        /// Comma-separated label rates, each in (0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
    },
    /// Singular values of a checkpoint's embedding of the window-0 graph.
    SvdDiag {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Destination CSV; defaults to `<out>/svd/<checkpoint>.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn print_table(entries: &[SweepEntry]) {
    for e in entries {
        let r = &e.report;
        println!(
            "{:<12} rate {:<5} accuracy {:.4} +- {:.4}  auc {:.4}",
            e.method.name(),
            e.rate,
            r.accuracy.mean,
            r.accuracy.std,
            r.auc.mean
        );
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(GateError::config("threads", "must be >= 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| GateError::config("threads", e.to_string()))?;
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        rates: match &cli.command {
            Command::Sweep { rates } => Some(rates.clone()),
            _ => None,
        },
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let exp = Experiment::prepare(cfg)?;
    match cli.command {
        Command::Run | Command::Sweep { .. } => print_table(&stages::run(&exp)?),
        Command::Synth => {
            let path = stages::synth(&exp)?;
            if exp.cfg.output.graph_dump {
                stages::dump_graph(&exp)?;
            }
            println!("wrote {}", path.display());
        }
        Command::Pretrain => stages::pretrain(&exp)?,
        Command::Finetune => print_table(&stages::finetune(&exp)?),
        Command::Evaluate => print_table(&stages::evaluate(&exp)?),
        Command::SvdDiag { checkpoint, output } => {
            let path = stages::svd_diag(&exp, &checkpoint, output.as_deref())?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
