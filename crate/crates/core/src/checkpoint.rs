//! Text checkpoint container for parameters, configuration, and
//! normalization statistics.
//!
//! Format (line oriented, space separated):
//!
//! ```text
//! adapt-container v1
//! kind checkpoint|model
//! [config]
//! <key> <value>            one per configuration field
//! [norm]                   checkpoint kind only
//! mean.<property> <value>
//! std.<property> <value>
//! [param] <name> <rows> <cols>
//! <cols values>            one line per row
//! end
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips every
//! f64 bit-exactly.

use crate::error::{Error, Result};
use crate::model::{AdaptorHead, AdaptorParams, Matrix, MetaLgnnParams, ModelConfig};
use crate::props::NormStats;
use crate::subgraph::RwrConfig;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Pre-training artifact: shared model, adaptor, and frozen normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub norm: NormStats,
    pub meta: MetaLgnnParams,
    pub adaptor: AdaptorParams,
}

/// A materialized scorer: customized or fine-tuned convolution weights plus
/// the scorer vector, ready for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ModelConfig,
    pub layer_weights: Vec<Matrix>,
    pub scorer: Matrix,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "container",
        msg: msg.into(),
    }
}

fn write_config(w: &mut impl Write, cfg: &ModelConfig) -> Result<()> {
    writeln!(w, "[config]")?;
    writeln!(w, "label_cap {}", cfg.label_cap)?;
    writeln!(w, "hidden {}", cfg.hidden)?;
    writeln!(w, "layers {}", cfg.layers)?;
    writeln!(w, "trunk_width {}", cfg.trunk_width)?;
    writeln!(w, "dropout {:.17e}", cfg.dropout)?;
    writeln!(w, "logit_scores {}", cfg.logit_scores)?;
    writeln!(w, "restart_prob {:.17e}", cfg.rwr.restart_prob)?;
    writeln!(w, "walk_steps {}", cfg.rwr.walk_steps)?;
    writeln!(w, "max_nodes_per_side {}", cfg.rwr.max_nodes_per_side)?;
    Ok(())
}

fn parse_config(entries: &BTreeMap<String, String>) -> Result<ModelConfig> {
    fn num<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &str) -> Result<T> {
        entries
            .get(key)
            .ok_or_else(|| bad(format!("missing config key {key}")))?
            .parse()
            .map_err(|_| bad(format!("bad value for {key}")))
    }
    Ok(ModelConfig {
        label_cap: num(entries, "label_cap")?,
        hidden: num(entries, "hidden")?,
        layers: num(entries, "layers")?,
        trunk_width: num(entries, "trunk_width")?,
        dropout: num(entries, "dropout")?,
        logit_scores: num(entries, "logit_scores")?,
        rwr: RwrConfig {
            restart_prob: num(entries, "restart_prob")?,
            walk_steps: num(entries, "walk_steps")?,
            max_nodes_per_side: num(entries, "max_nodes_per_side")?,
        },
    })
}

fn write_param(w: &mut impl Write, name: &str, m: &Matrix) -> Result<()> {
    writeln!(w, "[param] {name} {} {}", m.rows, m.cols)?;
    for r in 0..m.rows {
        let row: Vec<String> = m.data[r * m.cols..(r + 1) * m.cols]
            .iter()
            .map(|v| format!("{v:.17e}"))
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

struct Container {
    kind: String,
    config: BTreeMap<String, String>,
    norm_lines: Vec<String>,
    params: BTreeMap<String, Matrix>,
}

fn finish_pending(
    pending: &mut Option<(String, usize, usize, Vec<f64>)>,
    params: &mut BTreeMap<String, Matrix>,
) -> Result<()> {
    if let Some((name, rows, cols, data)) = pending.take() {
        if data.len() != rows * cols {
            return Err(bad(format!(
                "param {name}: expected {} values, found {}",
                rows * cols,
                data.len()
            )));
        }
        params.insert(name, Matrix::from_rows(rows, cols, data));
    }
    Ok(())
}

fn read_container(r: impl BufRead) -> Result<Container> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.ok_or_else(|| bad("empty file"))?;
    if header.trim() != "adapt-container v1" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let kind_line = lines.next().transpose()?.ok_or_else(|| bad("missing kind"))?;
    let kind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| bad("missing kind"))?
        .trim()
        .to_string();

    let mut config = BTreeMap::new();
    let mut norm_lines = Vec::new();
    let mut params = BTreeMap::new();
    enum Section {
        None,
        Config,
        Norm,
    }
    let mut section = Section::None;
    let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
    for line in lines {
        let line = line?;
        let line = line.trim_end();
        if line == "end" {
            finish_pending(&mut pending, &mut params)?;
            break;
        }
        if line == "[config]" {
            finish_pending(&mut pending, &mut params)?;
            section = Section::Config;
            continue;
        }
        if line == "[norm]" {
            finish_pending(&mut pending, &mut params)?;
            section = Section::Norm;
            continue;
        }
        if let Some(rest) = line.strip_prefix("[param] ") {
            finish_pending(&mut pending, &mut params)?;
            section = Section::None;
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("param without name"))?;
            let rows: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("param {name}: bad rows")))?;
            let cols: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("param {name}: bad cols")))?;
            pending = Some((name.to_string(), rows, cols, Vec::with_capacity(rows * cols)));
            continue;
        }
        if let Some((_, _, _, data)) = pending.as_mut() {
            for tok in line.split_whitespace() {
                data.push(tok.parse().map_err(|_| bad(format!("bad float {tok:?}")))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        match section {
            Section::Config => {
                let (k, v) = line
                    .split_once(' ')
                    .ok_or_else(|| bad(format!("bad config line {line:?}")))?;
                config.insert(k.to_string(), v.trim().to_string());
            }
            Section::Norm => norm_lines.push(line.to_string()),
            Section::None => return Err(bad(format!("unexpected line {line:?}"))),
        }
    }
    Ok(Container {
        kind,
        config,
        norm_lines,
        params,
    })
}

fn take_param(params: &mut BTreeMap<String, Matrix>, name: &str) -> Result<Matrix> {
    params
        .remove(name)
        .ok_or_else(|| bad(format!("missing parameter {name}")))
}

impl Checkpoint {
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "adapt-container v1")?;
        writeln!(w, "kind checkpoint")?;
        write_config(&mut w, &self.model)?;
        writeln!(w, "[norm]")?;
        self.norm.write_key_values(&mut w)?;
        for (l, m) in self.meta.layer_weights.iter().enumerate() {
            write_param(&mut w, &format!("meta.layer{l}"), m)?;
        }
        write_param(&mut w, "delta", &self.meta.scorer)?;
        write_param(&mut w, "adaptor.trunk_w", &self.adaptor.trunk_weight)?;
        write_param(&mut w, "adaptor.trunk_b", &self.adaptor.trunk_bias)?;
        for (l, head) in self.adaptor.heads.iter().enumerate() {
            write_param(&mut w, &format!("adaptor.head{l}.w"), &head.weight)?;
            write_param(&mut w, &format!("adaptor.head{l}.b"), &head.bias)?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut c = read_container(r)?;
        if c.kind != "checkpoint" {
            return Err(bad(format!("expected kind checkpoint, got {}", c.kind)));
        }
        let model = parse_config(&c.config)?;
        let norm_text = c.norm_lines.join("\n");
        let norm = NormStats::read_key_values(std::io::Cursor::new(norm_text))?;
        let layer_weights = (0..model.layers)
            .map(|l| take_param(&mut c.params, &format!("meta.layer{l}")))
            .collect::<Result<Vec<_>>>()?;
        let scorer = take_param(&mut c.params, "delta")?;
        let trunk_weight = take_param(&mut c.params, "adaptor.trunk_w")?;
        let trunk_bias = take_param(&mut c.params, "adaptor.trunk_b")?;
        let heads = (0..model.layers)
            .map(|l| {
                Ok(AdaptorHead {
                    weight: take_param(&mut c.params, &format!("adaptor.head{l}.w"))?,
                    bias: take_param(&mut c.params, &format!("adaptor.head{l}.b"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            norm,
            meta: MetaLgnnParams {
                layer_weights,
                scorer,
            },
            adaptor: AdaptorParams {
                trunk_weight,
                trunk_bias,
                heads,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

impl TrainedModel {
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "adapt-container v1")?;
        writeln!(w, "kind model")?;
        write_config(&mut w, &self.model)?;
        for (l, m) in self.layer_weights.iter().enumerate() {
            write_param(&mut w, &format!("layer{l}"), m)?;
        }
        write_param(&mut w, "delta", &self.scorer)?;
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut c = read_container(r)?;
        if c.kind != "model" {
            return Err(bad(format!("expected kind model, got {}", c.kind)));
        }
        let model = parse_config(&c.config)?;
        let layer_weights = (0..model.layers)
            .map(|l| take_param(&mut c.params, &format!("layer{l}")))
            .collect::<Result<Vec<_>>>()?;
        let scorer = take_param(&mut c.params, "delta")?;
        Ok(Self {
            model,
            layer_weights,
            scorer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::props::PROPERTY_DIMS;

    fn sample_checkpoint() -> Checkpoint {
        let model = ModelConfig {
            label_cap: 6,
            hidden: 4,
            layers: 2,
            trunk_width: 3,
            dropout: 0.1,
            logit_scores: false,
            rwr: RwrConfig::default(),
        };
        let meta = MetaLgnnParams::init(&model, 1);
        let mut adaptor = AdaptorParams::init(&model, 2);
        // Perturb the zero-initialized heads so the round trip is non-trivial.
        adaptor.heads[0].weight.data[5] = -0.123456789012345678;
        adaptor.heads[1].bias.data[3] = 1e-300;
        let norm = NormStats {
            mean: [1.5; PROPERTY_DIMS],
            std: [0.25; PROPERTY_DIMS],
        };
        Checkpoint {
            model,
            norm,
            meta,
            adaptor,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let back = Checkpoint::read(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(ckpt, back);
        for (a, b) in ckpt.meta.scorer.data.iter().zip(&back.meta.scorer.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(
            ckpt.adaptor.heads[1].bias.data[3].to_bits(),
            back.adaptor.heads[1].bias.data[3].to_bits()
        );
    }

    #[test]
    fn model_round_trip() {
        let ckpt = sample_checkpoint();
        let model = TrainedModel {
            model: ckpt.model,
            layer_weights: ckpt.meta.layer_weights.clone(),
            scorer: ckpt.meta.scorer.clone(),
        };
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        let back = TrainedModel::read(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let ckpt = sample_checkpoint();
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        assert!(TrainedModel::read(std::io::Cursor::new(&buf)).is_err());
    }

    #[test]
    fn missing_parameter_is_reported() {
        let ckpt = sample_checkpoint();
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let broken = text.replace("[param] delta", "[param] other");
        let err = Checkpoint::read(std::io::Cursor::new(broken)).unwrap_err();
        assert!(err.to_string().contains("delta"), "{err}");
    }
}
