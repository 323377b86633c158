use crate::config::{FileConfig, ResolvedConfig};
use crate::{Cli, Command, PartitionArg, Strategy};
use adapt_core::checkpoint::{Checkpoint, TrainedModel};
use adapt_core::eval::{
    ablation_suite, evaluate_hr, run_seeds, AblationConfig, LgnnScorer, Partition,
};
use adapt_core::graph::{load_edge_list, serialize_edge_list, BipartiteGraph, Delimiter};
use adapt_core::manifest::Manifest;
use adapt_core::props::{compute_properties, fit_norm};
use adapt_core::split::{sparsify_train, split_dataset};
use adapt_core::synth::{gen_synthetic, SynthConfig};
use adapt_core::train::{finetune, pretrain, EpochMetrics, FinetuneStrategy};
use adapt_core::derive_seed;
use anyhow::{anyhow, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Marker for problems with the invocation itself (bad paths, bad flags);
/// mapped to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn run_directory(explicit: Option<&Path>, command: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let base = std::env::var("ADAPT_RUN_DIR").unwrap_or_else(|_| "runs".into());
            let stamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .expect("clock before epoch")
                .as_secs();
            PathBuf::from(base).join(format!("{stamp}-{command}-{}", std::process::id()))
        }
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn parse_delimiter(arg: &str, input: &Path) -> Result<Delimiter> {
    match arg {
        "auto" => {
            // Peek the first data line: a comma means comma-separated.
            let text = std::fs::read_to_string(input)?;
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
            Ok(match first {
                Some(line) if line.contains(',') => Delimiter::Char(','),
                _ => Delimiter::Whitespace,
            })
        }
        "whitespace" | "space" | "tab" => Ok(Delimiter::Whitespace),
        s if s.chars().count() == 1 => Ok(Delimiter::Char(s.chars().next().unwrap())),
        other => Err(usage(format!("unrecognized delimiter {other:?}"))),
    }
}

fn load_graph_file(path: &Path, delimiter: Delimiter) -> Result<BipartiteGraph> {
    require_file(path, "graph file")?;
    let reader = BufReader::new(File::open(path)?);
    load_edge_list(reader, delimiter).with_context(|| format!("loading {}", path.display()))
}

/// Edge-list files of a corpus directory, in name order for determinism.
fn load_corpus(dir: &Path) -> Result<Vec<BipartiteGraph>> {
    require_dir(dir, "corpus directory")?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("corpus directory {} is empty", dir.display())));
    }
    paths
        .iter()
        .map(|p| load_graph_file(p, Delimiter::Whitespace))
        .collect()
}

fn write_metrics(path: &Path, header: &str, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch\tloss\t{header}")?;
    for m in metrics {
        writeln!(w, "{}\t{:.6}\t{:.6}", m.epoch, m.loss, m.val)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(p) => {
            require_file(p, "config file")?;
            FileConfig::load(Some(p))?
        }
        None => FileConfig::default(),
    };
    let run_dir = cli.run_dir.as_deref();

    match cli.command {
        Command::Prepare {
            input,
            val_frac,
            test_frac,
            keep_frac,
            seed,
            delimiter,
            out,
        } => {
            require_file(&input, "input file")?;
            let dir = run_directory(run_dir, "prepare")?;
            let delim = parse_delimiter(&delimiter, &input)?;
            let graph = load_graph_file(&input, delim)?;
            let split = split_dataset(&graph, val_frac, test_frac, seed)?;
            let split = sparsify_train(&split, keep_frac, derive_seed(seed, 1))?;
            let manifest = Manifest { graph, split };
            let out_path = out.unwrap_or_else(|| dir.join("split.manifest"));
            manifest.save(&out_path)?;

            let model = file_cfg.model_config();
            let protocol = file_cfg.protocol();
            let args = BTreeMap::from([
                ("input".into(), input.display().to_string()),
                ("val_frac".into(), val_frac.to_string()),
                ("test_frac".into(), test_frac.to_string()),
                ("keep_frac".into(), keep_frac.to_string()),
                ("seed".into(), seed.to_string()),
            ]);
            ResolvedConfig::new("prepare", args, &model, &protocol).save(&dir.join("resolved.toml"))?;

            let g = &manifest.graph;
            let s = &manifest.split;
            println!(
                "users {}  items {}  edges {}",
                g.user_count(),
                g.item_count(),
                g.edge_count()
            );
            println!(
                "train {}  val {}  test {}  (keep_frac {keep_frac})",
                s.train.len(),
                s.val.len(),
                s.test.len()
            );
            println!("manifest written to {}", out_path.display());
        }

        Command::Synth {
            users,
            items,
            density,
            exponent,
            seed,
            out,
        } => {
            let dir = run_directory(run_dir, "synth")?;
            let graph = gen_synthetic(&SynthConfig {
                user_count: users,
                item_count: items,
                target_density: density,
                preferential_exponent: exponent,
                seed,
            })?;
            let out_path = out.unwrap_or_else(|| dir.join("graph.tsv"));
            let mut w = BufWriter::new(File::create(&out_path)?);
            serialize_edge_list(&graph, &mut w)?;
            w.flush()?;
            println!(
                "wrote {} edges ({} users x {} items) to {}",
                graph.edge_count(),
                users,
                items,
                out_path.display()
            );
        }

        Command::Props { graph, corpus, out } => match (graph, corpus) {
            (Some(path), None) => {
                let g = load_graph_file(&path, Delimiter::Whitespace)?;
                let pv = compute_properties(&g)?;
                let mut text = Vec::new();
                pv.write_key_values(&mut text)?;
                print!("{}", String::from_utf8_lossy(&text));
                if let Some(out_path) = out {
                    std::fs::write(&out_path, &text)?;
                }
            }
            (None, Some(dir)) => {
                let graphs = load_corpus(&dir)?;
                let vectors = graphs
                    .iter()
                    .map(compute_properties)
                    .collect::<adapt_core::Result<Vec<_>>>()?;
                let stats = fit_norm(&vectors)?;
                let mut text = Vec::new();
                stats.write_key_values(&mut text)?;
                print!("{}", String::from_utf8_lossy(&text));
                if let Some(out_path) = out {
                    std::fs::write(&out_path, &text)?;
                }
            }
            _ => return Err(usage("props needs exactly one of --graph or --corpus")),
        },

        Command::Pretrain {
            corpus,
            seed,
            epochs,
            batch_size,
            learning_rate,
        } => {
            let dir = run_directory(run_dir, "pretrain")?;
            let graphs = load_corpus(&corpus)?;
            let model_cfg = file_cfg.model_config();
            let mut cfg = file_cfg.pretrain_config(seed);
            if let Some(e) = epochs {
                cfg.max_epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            let outcome = pretrain(&graphs, &model_cfg, &cfg)?;
            let ckpt_path = dir.join("checkpoint.ckpt");
            outcome.checkpoint.save(&ckpt_path)?;
            write_metrics(&dir.join("metrics.tsv"), "heldout_loss", &outcome.metrics)?;

            let args = BTreeMap::from([
                ("corpus".into(), corpus.display().to_string()),
                ("graphs".into(), graphs.len().to_string()),
                ("seed".into(), cfg.seed.to_string()),
                ("batch_size".into(), cfg.batch_size.to_string()),
                ("learning_rate".into(), cfg.learning_rate.to_string()),
                ("max_epochs".into(), cfg.max_epochs.to_string()),
                ("patience".into(), cfg.patience.to_string()),
                ("holdout_frac".into(), cfg.holdout_frac.to_string()),
                ("use_adaptor".into(), cfg.use_adaptor.to_string()),
            ]);
            ResolvedConfig::new("pretrain", args, &model_cfg, &file_cfg.protocol())
                .save(&dir.join("resolved.toml"))?;
            println!(
                "pre-trained on {} graphs for {} epochs (best epoch {})",
                graphs.len(),
                outcome.metrics.len(),
                outcome.best_epoch
            );
            println!("checkpoint written to {}", ckpt_path.display());
        }

        Command::Finetune {
            checkpoint,
            manifest,
            strategy,
            seed,
            epochs,
            batch_size,
            learning_rate,
        } => {
            require_file(&checkpoint, "checkpoint")?;
            require_file(&manifest, "manifest")?;
            let dir = run_directory(run_dir, "finetune")?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let m = Manifest::load(&manifest)?;
            let mut cfg = file_cfg.finetune_config(seed);
            if let Some(e) = epochs {
                cfg.max_epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            let strat = match strategy {
                Strategy::Direct => FinetuneStrategy::Direct,
                Strategy::Joint => FinetuneStrategy::Joint,
            };
            let outcome = finetune(&ckpt, &m.graph, &m.split, &cfg, strat)?;
            let model_path = dir.join("model.ckpt");
            outcome.model.save(&model_path)?;
            write_metrics(&dir.join("metrics.tsv"), "val_hr", &outcome.metrics)?;

            let args = BTreeMap::from([
                ("checkpoint".into(), checkpoint.display().to_string()),
                ("manifest".into(), manifest.display().to_string()),
                (
                    "strategy".into(),
                    match strat {
                        FinetuneStrategy::Direct => "direct".to_string(),
                        FinetuneStrategy::Joint => "joint".to_string(),
                    },
                ),
                ("seed".into(), cfg.seed.to_string()),
                ("batch_size".into(), cfg.batch_size.to_string()),
                ("learning_rate".into(), cfg.learning_rate.to_string()),
                ("max_epochs".into(), cfg.max_epochs.to_string()),
                ("patience".into(), cfg.patience.to_string()),
            ]);
            ResolvedConfig::new("finetune", args, &ckpt.model, &cfg.protocol)
                .save(&dir.join("resolved.toml"))?;
            println!(
                "fine-tuned ({}) for {} epochs; best epoch {} with val HR {:.4}",
                match strat {
                    FinetuneStrategy::Direct => "direct",
                    FinetuneStrategy::Joint => "joint",
                },
                outcome.metrics.len(),
                outcome.best_epoch,
                outcome.best_val_hr
            );
            println!("model written to {}", model_path.display());
        }

        Command::Eval {
            model,
            manifest,
            partition,
        } => {
            require_file(&model, "model")?;
            require_file(&manifest, "manifest")?;
            let dir = run_directory(run_dir, "eval")?;
            let trained = TrainedModel::load(&model)?;
            let m = Manifest::load(&manifest)?;
            let protocol = file_cfg.protocol();
            let part = match partition {
                PartitionArg::Val => Partition::Val,
                PartitionArg::Test => Partition::Test,
            };
            let g_train = m.split.train_graph(&m.graph)?;
            let scorer = LgnnScorer {
                graph: &g_train,
                layer_weights: &trained.layer_weights,
                scorer: &trained.scorer,
                cfg: &trained.model,
            };
            let summary = run_seeds(&protocol.seeds, |seed| {
                Ok(evaluate_hr(&scorer, &g_train, &m.split, part, &protocol, seed)?.hr)
            })?;

            let mut report = String::new();
            writeln!(report, "partition {:?}", part).unwrap();
            for &(seed, hr) in &summary.per_seed {
                writeln!(report, "seed {seed} hr {hr:.6}").unwrap();
            }
            writeln!(report, "hr {} ({} seeds)", summary.percent(), summary.per_seed.len()).unwrap();
            print!("{report}");
            std::fs::write(dir.join("report.txt"), &report)?;
            let dataset = manifest
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| manifest.display().to_string());
            let mut kv = String::new();
            for &(seed, hr) in &summary.per_seed {
                writeln!(kv, "dataset {dataset} partition {:?} seed {seed} hr {hr:.17e}", part).unwrap();
            }
            writeln!(kv, "mean {:.17e} std {:.17e}", summary.mean, summary.std).unwrap();
            std::fs::write(dir.join("summary.kv"), kv)?;
            ResolvedConfig::new(
                "eval",
                BTreeMap::from([
                    ("model".into(), model.display().to_string()),
                    ("manifest".into(), manifest.display().to_string()),
                ]),
                &trained.model,
                &protocol,
            )
            .save(&dir.join("resolved.toml"))?;
        }

        Command::Ablation {
            corpus,
            manifest,
            seed,
        } => {
            require_file(&manifest, "manifest")?;
            let dir = run_directory(run_dir, "ablation")?;
            let graphs = load_corpus(&corpus)?;
            let m = Manifest::load(&manifest)?;
            let cfg = AblationConfig {
                model: file_cfg.model_config(),
                pretrain: file_cfg.pretrain_config(seed),
                finetune: file_cfg.finetune_config(seed),
                protocol: file_cfg.protocol(),
            };
            let report = ablation_suite(&graphs, &m.graph, &m.split, &cfg)?;
            print!("{report}");
            std::fs::write(dir.join("ablation.txt"), format!("{report}"))?;
            std::fs::write(dir.join("ablation.kv"), report.key_values())?;
            ResolvedConfig::new(
                "ablation",
                BTreeMap::from([
                    ("corpus".into(), corpus.display().to_string()),
                    ("manifest".into(), manifest.display().to_string()),
                    ("seed".into(), cfg.pretrain.seed.to_string()),
                ]),
                &cfg.model,
                &cfg.protocol,
            )
            .save(&dir.join("resolved.toml"))?;
        }
    }
    Ok(())
}
