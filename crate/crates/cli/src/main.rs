//! `emg-snn`: synthesize data, encode, train, evaluate, benchmark and map
//! networks to the fixed-point neuron model.
//!
//! Every command writes into the `--out` directory an echo of the effective
//! configuration (`config.json`) and a `manifest.json` listing each output
//! with its size and SHA-256.

mod commands;
mod config;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchBackend, EvalBackend};
use config::{ConfigError, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DOMAIN: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "emg-snn", version, about = "EMG gesture classification with spiking networks")]
struct Cli {
    /// JSON run configuration; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory receiving every output.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic labeled recordings as CSV.
    Synth {
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Encode one window of a recording into a text spike raster.
    Encode {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Window length in samples; defaults to the rest of the recording.
        #[arg(long)]
        len: Option<usize>,
    },
    /// Train a network and write checkpoints and the accuracy history.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        quant_aware: bool,
    },
    /// Evaluate a checkpoint on the test split or a directory of recordings.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "float")]
        backend: EvalBackend,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Latency profile, operation counts and energy proxy.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "float")]
        backend: BenchBackend,
        /// Batch size; repeat for several.
        #[arg(long = "batch")]
        batches: Vec<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Sweep the hardware validity region of the adaptation parameters.
    Maphw {
        #[arg(long)]
        vth: Option<i64>,
    },
}

/// Folds command flags into the config so the echo shows what actually ran.
fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) {
    match cmd {
        Command::Synth { per_class } => {
            if let Some(n) = per_class {
                cfg.data.per_class = *n;
            }
        }
        Command::Train {
            epochs,
            lr,
            quant_aware,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.train.learning_rate = *lr;
            }
            cfg.train.quant_aware |= quant_aware;
        }
        Command::Bench {
            batches, repeats, ..
        } => {
            if !batches.is_empty() {
                cfg.bench.batch_sizes = batches.clone();
            }
            if let Some(r) = repeats {
                cfg.bench.repeats = *r;
            }
        }
        Command::Maphw { vth } => {
            if let Some(v) = vth {
                cfg.hw.vth_fixed = *v;
            }
        }
        Command::Encode { .. } | Command::Eval { .. } => {}
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth { .. } => commands::synth(&cfg, out),
        Command::Encode { input, start, len } => commands::encode(&cfg, out, input, *start, *len),
        Command::Train { .. } => commands::train_cmd(&cfg, out),
        Command::Eval {
            checkpoint,
            backend,
            data,
        } => commands::eval(&cfg, out, checkpoint, *backend, data.as_deref()),
        Command::Bench {
            checkpoint,
            backend,
            ..
        } => commands::bench(&cfg, out, checkpoint.as_deref(), *backend),
        Command::Maphw { .. } => commands::maphw(&cfg, out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        EXIT_USAGE
    } else if err.downcast_ref::<emg_snn::Error>().is_some() {
        EXIT_DOMAIN
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
