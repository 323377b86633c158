//! Layered run configuration: defaults, then the TOML config file, then
//! command-line flags. The fully resolved configuration is echoed into the
//! run directory so any result can be reproduced from that file and the
//! seed alone.

use adapt_core::eval::EvalProtocol;
use adapt_core::model::ModelConfig;
use adapt_core::subgraph::RwrConfig;
use adapt_core::train::{FinetuneConfig, PretrainConfig};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Optional-field mirror of the configuration file.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub rwr: RwrSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub label_cap: Option<u32>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub trunk_width: Option<usize>,
    pub dropout: Option<f64>,
    pub logit_scores: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RwrSection {
    pub restart_prob: Option<f64>,
    pub walk_steps: Option<usize>,
    pub max_nodes_per_side: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub batch_size: Option<usize>,
    pub samples_per_epoch: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub holdout_frac: Option<f64>,
    pub use_adaptor: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub k: Option<usize>,
    pub negatives: Option<usize>,
    pub seeds: Option<Vec<u64>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let d = ModelConfig::default();
        let rd = RwrConfig::default();
        ModelConfig {
            label_cap: self.model.label_cap.unwrap_or(d.label_cap),
            hidden: self.model.hidden.unwrap_or(d.hidden),
            layers: self.model.layers.unwrap_or(d.layers),
            trunk_width: self.model.trunk_width.unwrap_or(d.trunk_width),
            dropout: self.model.dropout.unwrap_or(d.dropout),
            logit_scores: self.model.logit_scores.unwrap_or(d.logit_scores),
            rwr: RwrConfig {
                restart_prob: self.rwr.restart_prob.unwrap_or(rd.restart_prob),
                walk_steps: self.rwr.walk_steps.unwrap_or(rd.walk_steps),
                max_nodes_per_side: self.rwr.max_nodes_per_side.unwrap_or(rd.max_nodes_per_side),
            },
        }
    }

    pub fn protocol(&self) -> EvalProtocol {
        let d = EvalProtocol::default();
        EvalProtocol {
            k: self.protocol.k.unwrap_or(d.k),
            negatives_per_positive: self.protocol.negatives.unwrap_or(d.negatives_per_positive),
            seeds: self.protocol.seeds.clone().unwrap_or(d.seeds),
        }
    }

    pub fn pretrain_config(&self, seed_flag: Option<u64>) -> PretrainConfig {
        let d = PretrainConfig::default();
        PretrainConfig {
            batch_size: self.pretrain.batch_size.unwrap_or(d.batch_size),
            samples_per_epoch: self.pretrain.samples_per_epoch.or(d.samples_per_epoch),
            learning_rate: self.pretrain.learning_rate.unwrap_or(d.learning_rate),
            max_epochs: self.pretrain.max_epochs.unwrap_or(d.max_epochs),
            patience: self.pretrain.patience.unwrap_or(d.patience),
            holdout_frac: self.pretrain.holdout_frac.unwrap_or(d.holdout_frac),
            use_adaptor: self.pretrain.use_adaptor.unwrap_or(d.use_adaptor),
            seed: seed_flag.or(self.pretrain.seed).unwrap_or(d.seed),
        }
    }

    pub fn finetune_config(&self, seed_flag: Option<u64>) -> FinetuneConfig {
        let d = FinetuneConfig::default();
        FinetuneConfig {
            batch_size: self.finetune.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.finetune.learning_rate.unwrap_or(d.learning_rate),
            max_epochs: self.finetune.max_epochs.unwrap_or(d.max_epochs),
            patience: self.finetune.patience.unwrap_or(d.patience),
            seed: seed_flag.or(self.finetune.seed).unwrap_or(d.seed),
            protocol: self.protocol(),
        }
    }
}

/// Fully resolved settings, echoed into the run directory as TOML.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub args: std::collections::BTreeMap<String, String>,
    pub model: ResolvedModel,
    pub rwr: ResolvedRwr,
    pub protocol: ResolvedProtocol,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedModel {
    pub label_cap: u32,
    pub hidden: usize,
    pub layers: usize,
    pub trunk_width: usize,
    pub dropout: f64,
    pub logit_scores: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedRwr {
    pub restart_prob: f64,
    pub walk_steps: usize,
    pub max_nodes_per_side: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedProtocol {
    pub k: usize,
    pub negatives: usize,
    pub seeds: Vec<u64>,
}

impl ResolvedConfig {
    pub fn new(
        command: &str,
        args: std::collections::BTreeMap<String, String>,
        model: &ModelConfig,
        protocol: &EvalProtocol,
    ) -> Self {
        Self {
            command: command.to_string(),
            args,
            model: ResolvedModel {
                label_cap: model.label_cap,
                hidden: model.hidden,
                layers: model.layers,
                trunk_width: model.trunk_width,
                dropout: model.dropout,
                logit_scores: model.logit_scores,
            },
            rwr: ResolvedRwr {
                restart_prob: model.rwr.restart_prob,
                walk_steps: model.rwr.walk_steps,
                max_nodes_per_side: model.rwr.max_nodes_per_side,
            },
            protocol: ResolvedProtocol {
                k: protocol.k,
                negatives: protocol.negatives_per_positive,
                seeds: protocol.seeds.clone(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing resolved config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
