use std::path::PathBuf;
use std::process::ExitCode;

use astrolabe::config::{Mode, RunConfig};
use astrolabe::export::export_plot_data;
use astrolabe::verify::verify_theory;
use astrolabe::{run_training, RunError};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "astrolabe",
    version,
    about = "Streaming reward fine-tuning on a toy video generator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Short,
    Long,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the base generator, then fine-tune it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the full-scale group size.
        #[arg(long = "paper-scale")]
        full_scale: bool,
        /// Resume from a checkpoint directory instead of pretraining.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory for config, metrics, checkpoint and summary.
        #[arg(long, env = "ASTROLABE_LOG_DIR", default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Randomized audit of the theoretical results.
    VerifyTheory {
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a metrics log to CSV.
    ExportMetrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool, RunError> {
    match cli.command {
        Command::Train {
            config,
            mode,
            seed,
            full_scale,
            resume,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Short => Mode::Short,
                    ModeArg::Long => Mode::Long,
                };
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if full_scale {
                cfg = cfg.full_scale();
            }
            let summary = run_training(&cfg, &out, resume.as_deref())?;
            println!(
                "trained {} epochs (epoch counter {}); metrics {}; checkpoint {}",
                summary.epochs_run,
                summary.final_epoch,
                summary.metrics.display(),
                summary.checkpoint.display()
            );
            Ok(true)
        }
        Command::VerifyTheory { trials, seed } => {
            let report = verify_theory(trials, seed)?;
            print!("{report}");
            Ok(report.ok())
        }
        Command::ExportMetrics { log, out } => {
            let rows = export_plot_data(&log, &out)?;
            println!("wrote {rows} rows to {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
