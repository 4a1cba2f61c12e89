//! `feedalign` command-line runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use feedalign::harness::{
    dump_features, evaluate_split, load_data, prepare_inputs, run_experiment, ExperimentConfig,
    ExperimentData, Precision,
};
use feedalign::model::checkpoint::{checkpoint_precision, load_checkpoint};
use feedalign::model::Network;
use feedalign::Real;

#[derive(Parser)]
#[command(
    name = "feedalign",
    version,
    about = "Train and inspect BP, FA, DFA and IFA networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Zero wall times so repeated runs write identical files.
        #[arg(long)]
        deterministic: bool,
        /// Output directory (default: runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report error and loss of a saved network on one split.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Config naming the dataset (default: config.toml beside the checkpoint).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write hidden-layer features of a saved network as CSV, one row per sample.
    DumpFeatures {
        checkpoint: PathBuf,
        /// Layer indices, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Only the first n samples of the split.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
    Test,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            deterministic,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.deterministic |= deterministic;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let summary = run_experiment(&cfg)?;
            let last = summary.last();
            println!(
                "epoch {}: train error {:.2}%, test error {:.2}%, loss {:.5} ({})",
                last.epoch,
                last.train_error,
                last.test_error,
                last.loss,
                summary.out_dir.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            split,
            config,
        } => with_network(&checkpoint, config, |cfg, ck| match cfg.precision {
            Precision::F64 => eval::<f64>(cfg, ck, split),
            Precision::F32 => eval::<f32>(cfg, ck, split),
        }),
        Command::DumpFeatures {
            checkpoint,
            layers,
            split,
            config,
            out,
            limit,
        } => with_network(&checkpoint, config, |cfg, ck| {
            let paths = match cfg.precision {
                Precision::F64 => dump::<f64>(cfg, ck, split, &layers, &out, limit),
                Precision::F32 => dump::<f32>(cfg, ck, split, &layers, &out, limit),
            }?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }),
    }
}

fn with_network(
    checkpoint: &Path,
    config: Option<PathBuf>,
    f: impl FnOnce(&ExperimentConfig, &Path) -> Result<()>,
) -> Result<()> {
    let config = config.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("config.toml")
    });
    let mut cfg = ExperimentConfig::load(&config)
        .with_context(|| format!("reading the dataset description from {}", config.display()))?;
    cfg.precision = match checkpoint_precision(checkpoint)? {
        "f32" => Precision::F32,
        _ => Precision::F64,
    };
    f(&cfg, checkpoint)
}

fn load<T: Real>(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
) -> Result<(Network<T>, ExperimentData<T>)> {
    let net: Network<T> = load_checkpoint(checkpoint)?;
    let mut data = load_data::<T>(cfg)?;
    prepare_inputs(cfg, &net, &mut data)?;
    Ok((net, data))
}

fn pick<T: Real>(data: &ExperimentData<T>, split: Split) -> Result<&feedalign::data::Dataset<T>> {
    Ok(match split {
        Split::Train => &data.train,
        Split::Test => &data.test,
        Split::Validation => match &data.validation {
            Some(v) => v,
            None => bail!("the config holds out no validation split"),
        },
    })
}

fn eval<T: Real>(cfg: &ExperimentConfig, checkpoint: &Path, split: Split) -> Result<()> {
    let (net, data) = load::<T>(cfg, checkpoint)?;
    let d = pick(&data, split)?;
    let ev = evaluate_split(&net, &d.inputs, &d.targets)?;
    println!(
        "error {:.4}%, loss {:.6}, samples {}",
        ev.error_pct,
        ev.loss,
        d.len()
    );
    Ok(())
}

fn dump<T: Real>(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    split: Split,
    layers: &[usize],
    out: &Path,
    limit: Option<usize>,
) -> Result<Vec<PathBuf>> {
    let (net, data) = load::<T>(cfg, checkpoint)?;
    let mut d = pick(&data, split)?.clone();
    if let Some(n) = limit {
        d = d.take_first(n);
    }
    std::fs::create_dir_all(out)?;
    Ok(dump_features(&net, &d.inputs, layers, out)?)
}
