//! Command-line entry point for the graph pre-training pipeline.
//!
//! Commands compose through files: `synth` writes edge lists, `prepare`
//! turns an edge list into a partitioned manifest, `pretrain` produces a
//! checkpoint from a corpus directory, `finetune` specializes a checkpoint
//! to a manifest, `eval` scores a model, and `ablation` runs the variant
//! comparison. Every run writes its resolved configuration, logs, and
//! outputs under a run directory; reruns with identical configuration and
//! seed reproduce outputs byte for byte.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adapt", version, about = "Localized collaborative filtering with adaptive graph pre-training")]
struct Cli {
    /// Directory for outputs; defaults to a timestamped directory under
    /// ./runs (override the base with ADAPT_RUN_DIR).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Worker-thread cap for parallel evaluation (env: ADAPT_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Direct,
    Joint,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PartitionArg {
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Load an edge list, split it, optionally sparsify the training set,
    /// and write a manifest.
    Prepare {
        /// Edge-list file: one `user item` interaction per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        val_frac: f64,
        #[arg(long, default_value_t = 0.05)]
        test_frac: f64,
        /// Fraction of training edges to keep (1.0 = no sparsification).
        #[arg(long, default_value_t = 1.0)]
        keep_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Field delimiter; `auto` detects commas, otherwise whitespace.
        #[arg(long, default_value = "auto")]
        delimiter: String,
        /// Manifest output path (default: <run dir>/split.manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic interaction graph.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        items: usize,
        #[arg(long)]
        density: f64,
        #[arg(long, default_value_t = 0.0)]
        exponent: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Edge-list output path (default: <run dir>/graph.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the structural property vector of a graph, or fit
    /// normalization statistics over a corpus directory.
    Props {
        /// Single edge-list file to analyze.
        #[arg(long, conflicts_with = "corpus")]
        graph: Option<PathBuf>,
        /// Directory of edge-list files to fit normalization over.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Where to write the key-value output (default: stdout only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train the shared model and adaptor on a corpus directory.
    Pretrain {
        /// Directory of edge-list files, one pre-training graph each.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Fine-tune a checkpoint on a target manifest.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        strategy: Strategy,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Evaluate a trained model's hit rate on a manifest partition.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        partition: PartitionArg,
    },
    /// Compare random-init, shared, customized, and both fine-tuning
    /// strategies on a target manifest.
    Ablation {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("ADAPT_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
