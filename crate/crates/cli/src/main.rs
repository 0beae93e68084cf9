//! `cardiacnet` batch front end: phantom generation, per-view training,
//! fused segmentation and evaluation.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use cardiacnet::volgrid::ViewAxis;
use cardiacnet::Error;
use clap::{Parser, Subcommand};

use crate::commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "cardiacnet", version, about = "Multi-view CNN segmentation with robust-region fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write COUNT synthetic image/label pairs as pNNN_img.cvl / pNNN_lbl.cvl.
    Phantom {
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// key=value phantom parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one view's network on the pairs in DATA_DIR.
    Train {
        data_dir: PathBuf,
        #[arg(long, value_parser = parse_view)]
        view: ViewAxis,
        #[arg(long)]
        out: PathBuf,
        /// key=value training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment IMAGE; writes OUT.prob.cvl and OUT.mask.cvl.
    Segment {
        image: PathBuf,
        /// One checkpoint per view (once for single mode).
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value = "adaptive")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// key=value options (connectivity=6|26).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score PRED against TRUTH and write a key=value report.
    Eval {
        pred: PathBuf,
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_view(s: &str) -> Result<ViewAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CARDIACNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("CARDIACNET_THREADS must be a count, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Phantom { count, out, seed, config } => commands::phantom(count, &out, seed, config.as_deref()),
        Command::Train { data_dir, view, out, config, seed } => {
            commands::train(&data_dir, view, &out, config.as_deref(), seed)
        }
        Command::Segment { image, ckpt, mode, out, config } => {
            commands::segment(&image, &ckpt, &mode, &out, config.as_deref())
        }
        Command::Eval { pred, truth, out } => commands::eval(&pred, &truth, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
