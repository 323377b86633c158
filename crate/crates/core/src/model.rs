//! The local-subgraph scoring model and its per-graph customization.
//!
//! Scoring runs label one-hot encoding, L rounds of graph convolution over
//! the symmetrically normalized local adjacency (self-loops included), mean
//! pooling, and a sigmoid dot-product scorer:
//!
//! ```text
//! H^0 = onehot(labels)
//! H^l = act(A_hat H^{l-1} theta^l)     act = relu for l < L, identity at L
//! h   = mean_rows(H^L)
//! s   = sigmoid(h . delta)
//! ```
//!
//! The adaptor is a hypernetwork over the normalized 8-dimensional property
//! vector: a shared tanh trunk feeds per-layer heads that emit feature-wise
//! scale and shift parameters, applied to the shared convolution weights as
//! `theta_m = theta (.) gamma + beta`. Heads start at zero with a constant
//! +1 folded into the gamma half, so customization begins as the identity.

use crate::error::Result;
use crate::graph::BipartiteGraph;
use crate::props::PROPERTY_DIMS;
use crate::subgraph::{extract_local_graph, LocalSubgraph, RwrConfig};
use adapt_tensor::{Edge, Tape, TensorRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Plain row-major matrix storage for parameters outside any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    /// Glorot-uniform initialization.
    pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Largest positional label; one-hot width is `label_cap + 1`.
    pub label_cap: u32,
    /// Node embedding width of every convolution layer.
    pub hidden: usize,
    /// Number of convolution layers.
    pub layers: usize,
    /// Width of the adaptor's shared trunk.
    pub trunk_width: usize,
    /// Dropout rate applied to non-final layer activations in train mode.
    pub dropout: f64,
    /// Score with the raw logit `h . delta` instead of its sigmoid. The
    /// ranking objective is unchanged; default is the sigmoid form.
    pub logit_scores: bool,
    pub rwr: RwrConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            label_cap: 32,
            hidden: 32,
            layers: 3,
            trunk_width: 64,
            dropout: 0.1,
            logit_scores: false,
            rwr: RwrConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        self.label_cap as usize + 1
    }

    /// `(rows, cols)` of each convolution weight matrix.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let d_in = if l == 0 { self.input_width() } else { self.hidden };
                (d_in, self.hidden)
            })
            .collect()
    }
}

/// Shared (meta) model parameters: per-layer convolution weights plus the
/// scorer vector. The scorer is shared with every customized model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLgnnParams {
    pub layer_weights: Vec<Matrix>,
    /// Scorer weights, stored as a `[hidden, 1]` column.
    pub scorer: Matrix,
}

impl MetaLgnnParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer_weights = cfg
            .layer_dims()
            .into_iter()
            .map(|(r, c)| Matrix::glorot(r, c, &mut rng))
            .collect();
        let scorer = Matrix::glorot(cfg.hidden, 1, &mut rng);
        Self {
            layer_weights,
            scorer,
        }
    }
}

/// One per-layer output head of the adaptor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorHead {
    /// `[trunk_width, 2 * d_in * d_out]`
    pub weight: Matrix,
    /// `[1, 2 * d_in * d_out]`
    pub bias: Matrix,
}

/// Hypernetwork parameters: shared trunk and per-layer heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorParams {
    /// `[8, trunk_width]`
    pub trunk_weight: Matrix,
    /// `[1, trunk_width]`
    pub trunk_bias: Matrix,
    pub heads: Vec<AdaptorHead>,
}

impl AdaptorParams {
    /// Trunk is Glorot-initialized; heads start at zero so that adaptation
    /// decodes to gamma = 1, beta = 0 for every input.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk_weight = Matrix::glorot(PROPERTY_DIMS, cfg.trunk_width, &mut rng);
        let trunk_bias = Matrix::zeros(1, cfg.trunk_width);
        let heads = cfg
            .layer_dims()
            .into_iter()
            .map(|(d_in, d_out)| AdaptorHead {
                weight: Matrix::zeros(cfg.trunk_width, 2 * d_in * d_out),
                bias: Matrix::zeros(1, 2 * d_in * d_out),
            })
            .collect();
        Self {
            trunk_weight,
            trunk_bias,
            heads,
        }
    }
}

/// Customized per-graph convolution weights; the scorer stays with the meta
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedParams {
    pub layer_weights: Vec<Matrix>,
}

/// Copy a stored matrix onto a tape, optionally as a trainable parameter.
pub fn lease(tape: &mut Tape, m: &Matrix, trainable: bool) -> Result<TensorRef> {
    let t = if trainable {
        tape.param(m.rows, m.cols, m.data.clone())?
    } else {
        tape.constant(m.rows, m.cols, m.data.clone())?
    };
    Ok(t)
}

/// One-hot encoding of the subgraph's positional labels, `[n, label_cap+1]`.
/// Label 0 (unreachable) keeps its own slot.
pub fn encode_labels(sub: &LocalSubgraph, label_cap: u32) -> Matrix {
    let width = label_cap as usize + 1;
    let n = sub.node_count();
    let mut data = vec![0.0; n * width];
    for (k, &label) in sub.labels.iter().enumerate() {
        let slot = label.min(label_cap) as usize;
        data[k * width + slot] = 1.0;
    }
    Matrix::from_rows(n, width, data)
}

/// Symmetrically normalized adjacency with self-loops of a local subgraph,
/// as a weighted edge list for the gather-add primitive.
pub fn normalized_adjacency(sub: &LocalSubgraph) -> Arc<Vec<Edge>> {
    let n = sub.node_count();
    let deg: Vec<f64> = (0..n).map(|k| (sub.adj[k].len() + 1) as f64).collect();
    let mut edges = Vec::with_capacity(2 * sub.edges.len() + n);
    for k in 0..n as u32 {
        edges.push((k, k, 1.0 / deg[k as usize]));
    }
    for &(a, b) in &sub.edges {
        let w = 1.0 / (deg[a as usize] * deg[b as usize]).sqrt();
        edges.push((a, b, w));
        edges.push((b, a, w));
    }
    Arc::new(edges)
}

/// Graph convolution stack over a local subgraph. `dropout_rng` supplies the
/// train-mode dropout masks; pass `None` for evaluation.
pub fn gcn_forward(
    tape: &mut Tape,
    sub: &LocalSubgraph,
    features: TensorRef,
    layer_weights: &[TensorRef],
    cfg: &ModelConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<TensorRef> {
    let adjacency = normalized_adjacency(sub);
    let n = sub.node_count();
    let last = layer_weights.len() - 1;
    let mut h = features;
    let mut rng = dropout_rng;
    for (l, &w) in layer_weights.iter().enumerate() {
        let agg = tape.edge_aggregate(h, Arc::clone(&adjacency), n)?;
        h = tape.matmul(agg, w)?;
        if l < last {
            h = tape.relu(h);
            if let Some(rng) = rng.as_deref_mut() {
                h = tape.dropout(h, cfg.dropout, true, rng)?;
            }
        }
    }
    Ok(h)
}

/// Mean pooling over all node rows: `[n, d] -> [1, d]`.
pub fn pool(tape: &mut Tape, h: TensorRef) -> Result<TensorRef> {
    Ok(tape.mean_rows(h)?)
}

/// Recommendation score from a pooled representation, `[1, 1]`.
pub fn score(tape: &mut Tape, pooled: TensorRef, scorer: TensorRef, logit: bool) -> Result<TensorRef> {
    let dot = tape.matmul(pooled, scorer)?;
    Ok(if logit { dot } else { tape.sigmoid(dot) })
}

/// Full scoring pass over one already-extracted subgraph.
pub fn score_subgraph(
    tape: &mut Tape,
    sub: &LocalSubgraph,
    layer_weights: &[TensorRef],
    scorer: TensorRef,
    cfg: &ModelConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<TensorRef> {
    let features = lease(tape, &encode_labels(sub, cfg.label_cap), false)?;
    let h = gcn_forward(tape, sub, features, layer_weights, cfg, dropout_rng)?;
    let pooled = pool(tape, h)?;
    score(tape, pooled, scorer, cfg.logit_scores)
}

/// Tape handles of the adaptor parameters.
pub struct AdaptorLease {
    pub trunk_weight: TensorRef,
    pub trunk_bias: TensorRef,
    pub heads: Vec<(TensorRef, TensorRef)>,
}

pub fn lease_adaptor(tape: &mut Tape, adaptor: &AdaptorParams, trainable: bool) -> Result<AdaptorLease> {
    Ok(AdaptorLease {
        trunk_weight: lease(tape, &adaptor.trunk_weight, trainable)?,
        trunk_bias: lease(tape, &adaptor.trunk_bias, trainable)?,
        heads: adaptor
            .heads
            .iter()
            .map(|h| Ok((lease(tape, &h.weight, trainable)?, lease(tape, &h.bias, trainable)?)))
            .collect::<Result<_>>()?,
    })
}

/// Hypernetwork forward: normalized property vector to per-layer adapting
/// parameters, each of length `2 * d_in * d_out`.
pub fn adaptor_forward(
    tape: &mut Tape,
    lease: &AdaptorLease,
    p_norm: &[f64; PROPERTY_DIMS],
) -> Result<Vec<TensorRef>> {
    let p = tape.constant(1, PROPERTY_DIMS, p_norm.to_vec())?;
    let z = tape.matmul(p, lease.trunk_weight)?;
    let z = tape.add(z, lease.trunk_bias)?;
    let z = tape.tanh(z);
    lease
        .heads
        .iter()
        .map(|&(w, b)| {
            let phi = tape.matmul(z, w)?;
            Ok(tape.add(phi, b)?)
        })
        .collect()
}

/// Feature-wise modulation of the shared weights: split each adapting vector
/// into scale and shift halves (row-major reshape to the layer's weight
/// shape), add the constant identity offset to the scale, then apply
/// `theta (.) gamma + beta`.
pub fn film_adapt(
    tape: &mut Tape,
    meta_layers: &[TensorRef],
    phi: &[TensorRef],
    cfg: &ModelConfig,
) -> Result<Vec<TensorRef>> {
    let dims = cfg.layer_dims();
    meta_layers
        .iter()
        .zip(phi)
        .zip(dims)
        .map(|((&theta, &phi), (d_in, d_out))| {
            let dd = d_in * d_out;
            let gamma = tape.slice_cols(phi, 0, dd)?;
            let gamma = tape.add_scalar(gamma, 1.0);
            let gamma = tape.reshape(gamma, d_in, d_out)?;
            let beta = tape.slice_cols(phi, dd, dd)?;
            let beta = tape.reshape(beta, d_in, d_out)?;
            let scaled = tape.mul(theta, gamma)?;
            Ok(tape.add(scaled, beta)?)
        })
        .collect()
}

/// Materialize the customized weights for a graph with the given normalized
/// property vector. Runs the same tape path as training, forward-only.
pub fn materialize_adapted(
    meta: &MetaLgnnParams,
    adaptor: &AdaptorParams,
    p_norm: &[f64; PROPERTY_DIMS],
    cfg: &ModelConfig,
) -> Result<AdaptedParams> {
    let mut tape = Tape::new();
    let meta_ids: Vec<TensorRef> = meta
        .layer_weights
        .iter()
        .map(|m| lease(&mut tape, m, false))
        .collect::<Result<_>>()?;
    let adaptor_lease = lease_adaptor(&mut tape, adaptor, false)?;
    let phi = adaptor_forward(&mut tape, &adaptor_lease, p_norm)?;
    let adapted = film_adapt(&mut tape, &meta_ids, &phi, cfg)?;
    let layer_weights = adapted
        .into_iter()
        .zip(cfg.layer_dims())
        .map(|(t, (r, c))| Matrix::from_rows(r, c, tape.values(t).to_vec()))
        .collect();
    Ok(AdaptedParams { layer_weights })
}

/// End-to-end evaluation-mode score of a (user, item) pair: extract the
/// local graph, encode, convolve, pool, score. Deterministic given the seed.
pub fn lgnn_score(
    g: &BipartiteGraph,
    u: u32,
    i: u32,
    layer_weights: &[Matrix],
    scorer: &Matrix,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<f64> {
    let sub = extract_local_graph(g, u, i, &cfg.rwr, cfg.label_cap, seed);
    let mut tape = Tape::new();
    let layers: Vec<TensorRef> = layer_weights
        .iter()
        .map(|m| lease(&mut tape, m, false))
        .collect::<Result<_>>()?;
    let delta = lease(&mut tape, scorer, false)?;
    let s = score_subgraph(&mut tape, &sub, &layers, delta, cfg, None)?;
    Ok(tape.scalar(s)?)
}
