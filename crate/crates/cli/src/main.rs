//! `modnet`: generate datasets, train, evaluate, sweep and visualize.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Preset, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or missing configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Anything that fails after validation; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "modnet", version, about = "Modulation-recognition workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON or TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Root seed (overrides the file and MODNET_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for outputs and the lock file.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Dataset container path.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    /// Architecture family: baseline, resnet, inception, cldnn, conv_matched_filter.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset and write it with its manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Comma-separated class names, e.g. `bpsk,qpsk`.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        #[arg(long)]
        frames_per_cell: Option<usize>,
        /// Comma-separated SNR values in dB.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr_grid: Option<Vec<i32>>,
    },
    /// Train a model; writes a checkpoint and its history CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
    },
    /// Run a hyperparameter sweep or the architecture comparison.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        /// filters, taps, depth or compare.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Export filter spectra and activation-maximizing frames.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
        /// Filter index or `all`.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Skip activation maximization.
        #[arg(long)]
        no_dream: bool,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    if let Some(d) = &common.dataset {
        cfg.dataset.path = Some(d.clone());
    }
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags) -> Result<(), CliError> {
    if let Some(a) = &f.arch {
        cfg.arch = Some(config::parse_arch(a)?);
    }
    let t = &mut cfg.train;
    t.max_epochs = f.epochs.or(t.max_epochs);
    t.batch_size = f.batch_size.or(t.batch_size);
    t.lr = f.lr.or(t.lr);
    t.patience = f.patience.or(t.patience);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            common,
            preset,
            classes,
            frames_per_cell,
            snr_grid,
        } => {
            let mut cfg = load(&common)?;
            let d = &mut cfg.dataset;
            d.preset = preset.or(d.preset);
            d.classes = classes.or(d.classes.take());
            d.frames_per_cell = frames_per_cell.or(d.frames_per_cell);
            d.snr_grid = snr_grid.or(d.snr_grid.take());
            commands::generate(&cfg)
        }
        Command::Train { common, flags } => {
            let mut cfg = load(&common)?;
            apply_train_flags(&mut cfg, &flags)?;
            commands::train(&cfg)
        }
        Command::Eval { common, checkpoint, arch } => {
            let mut cfg = load(&common)?;
            if let Some(a) = arch {
                cfg.arch = Some(config::parse_arch(&a)?);
            }
            cfg.eval.checkpoint = checkpoint.or(cfg.eval.checkpoint.take());
            commands::eval(&cfg)
        }
        Command::Sweep { common, flags, sweep } => {
            let mut cfg = load(&common)?;
            apply_train_flags(&mut cfg, &flags)?;
            if let Some(s) = sweep {
                cfg.sweep.kind = Some(s.parse().map_err(|e: modnet_core::train::TrainError| CliError::Config(e.to_string()))?);
            }
            commands::sweep(&cfg)
        }
        Command::Visualize {
            common,
            checkpoint,
            layer,
            filter,
            steps,
            no_dream,
        } => {
            let mut cfg = load(&common)?;
            let v = &mut cfg.visualize;
            v.checkpoint = checkpoint.or(v.checkpoint.take());
            v.layer = layer.or(v.layer);
            v.steps = steps.or(v.steps);
            if no_dream {
                v.dream = Some(false);
            }
            match filter.as_deref() {
                None => {}
                Some("all") => v.filters = None,
                Some(list) => {
                    v.filters = Some(
                        list.split(',')
                            .map(|s| {
                                s.trim()
                                    .parse()
                                    .map_err(|_| CliError::Config(format!("bad filter index `{s}`")))
                            })
                            .collect::<Result<_, _>>()?,
                    )
                }
            }
            commands::visualize(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("modnet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
