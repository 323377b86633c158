//! Pairwise ranking objective, multi-graph pre-training, and fine-tuning.
//!
//! Pre-training and fine-tuning share one loss implementation; the modes
//! differ only in which parameters the optimizer sees:
//!
//! * pre-training: shared convolution weights, scorer, and adaptor, with
//!   the customized weights re-derived through the modulation path every
//!   batch (gradients flow through it);
//! * direct fine-tuning: the materialized customized weights and the
//!   scorer; the shared weights and adaptor are untouched;
//! * joint fine-tuning: shared weights, scorer, and adaptor, with the
//!   target graph's property vector held fixed;
//! * from-scratch training: randomly initialized shared weights and scorer,
//!   no adaptor.
//!
//! Training never reads validation or test partitions; hold-out data is
//! used only to monitor convergence (pre-training) or to select the best
//! epoch by validation hit rate (fine-tuning).

use crate::checkpoint::{Checkpoint, TrainedModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate_hr, EvalProtocol, LgnnScorer, Partition};
use crate::graph::{sample_negatives, BipartiteGraph};
use crate::model::{
    adaptor_forward, film_adapt, lease, lease_adaptor, lgnn_score, materialize_adapted,
    score_subgraph, AdaptorParams, Matrix, MetaLgnnParams, ModelConfig,
};
use crate::props::{compute_properties, fit_norm, normalize, PROPERTY_DIMS};
use crate::split::{split_dataset, EdgeSplit};
use crate::subgraph::extract_local_graph;
use crate::{derive_seed, Result as CoreResult};
use adapt_tensor::{Adam, AdamConfig, Tape, TensorRef};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    /// Positive interactions per batch; an equal number of negatives is
    /// sampled alongside.
    pub batch_size: usize,
    /// Interactions consumed per epoch; defaults to half the pooled training
    /// edges and must stay below the pooled interaction count.
    pub samples_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Fraction of each graph's interactions held out for the convergence
    /// signal.
    pub holdout_frac: f64,
    /// Train the adaptor alongside the shared model. With `false` the
    /// adaptor stays at its identity initialization and pre-training is
    /// plain shared-model training.
    pub use_adaptor: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            samples_per_epoch: None,
            learning_rate: 0.001,
            max_epochs: 100,
            patience: 5,
            holdout_frac: 0.05,
            use_adaptor: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation hit-rate improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Protocol for the per-epoch validation hit rate.
    pub protocol: EvalProtocol,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 0.001,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            protocol: EvalProtocol::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneStrategy {
    /// Materialize the customized weights once, then optimize them and the
    /// scorer; shared weights and adaptor stay frozen.
    Direct,
    /// Optimize the shared weights, scorer, and adaptor jointly; customized
    /// weights are re-derived through the modulation every step.
    Joint,
}

/// One training batch: positive interactions of a source graph paired with
/// sampled negatives.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub graph: usize,
    /// `(user, positive item, negative item)`
    pub triplets: Vec<(u32, u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss per pair.
    pub loss: f64,
    /// Held-out mean loss (pre-training) or validation hit rate
    /// (fine-tuning).
    pub val: f64,
}

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

pub struct FinetuneOutcome {
    pub model: TrainedModel,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_hr: f64,
}

/// Pairwise ranking loss, summed over the batch:
/// `sum_k -ln sigmoid(pos_k - neg_k)`.
pub fn bpr_loss(tape: &mut Tape, pos: &[TensorRef], neg: &[TensorRef]) -> Result<TensorRef> {
    if pos.is_empty() || pos.len() != neg.len() {
        return Err(Error::Config(format!(
            "ranking loss needs matched non-empty score lists, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    let pos = tape.concat_rows(pos)?;
    let neg = tape.concat_rows(neg)?;
    let diff = tape.sub(pos, neg)?;
    let sig = tape.sigmoid(diff);
    let ln = tape.ln(sig);
    let total = tape.sum_all(ln);
    Ok(tape.neg(total))
}

/// Value-level counterpart for monitoring: `-ln sigmoid(s_pos - s_neg)`.
pub fn bpr_loss_value(s_pos: f64, s_neg: f64) -> f64 {
    -adapt_tensor::sigmoid(s_pos - s_neg).ln()
}

/// Mutable parameter bundle of one training mode. The optimizer sees
/// exactly the fields present here, in registration order.
struct TrainState {
    layers: Vec<Matrix>,
    scorer: Matrix,
    adaptor: Option<AdaptorParams>,
}

impl TrainState {
    fn trainable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers.len())
            .map(|l| format!("layer{l}"))
            .collect();
        names.push("delta".into());
        if let Some(adaptor) = &self.adaptor {
            names.push("adaptor.trunk_w".into());
            names.push("adaptor.trunk_b".into());
            for l in 0..adaptor.heads.len() {
                names.push(format!("adaptor.head{l}.w"));
                names.push(format!("adaptor.head{l}.b"));
            }
        }
        names
    }

    fn param_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.layers.iter().map(Matrix::len).collect();
        sizes.push(self.scorer.len());
        if let Some(adaptor) = &self.adaptor {
            sizes.push(adaptor.trunk_weight.len());
            sizes.push(adaptor.trunk_bias.len());
            for head in &adaptor.heads {
                sizes.push(head.weight.len());
                sizes.push(head.bias.len());
            }
        }
        sizes
    }

    /// Current scoring weights: through the modulation path when an adaptor
    /// and property vector are present, otherwise the stored layers.
    fn materialized_layers(
        &self,
        p_norm: Option<&[f64; PROPERTY_DIMS]>,
        cfg: &ModelConfig,
    ) -> Result<Vec<Matrix>> {
        match (&self.adaptor, p_norm) {
            (Some(adaptor), Some(p)) => {
                let meta = MetaLgnnParams {
                    layer_weights: self.layers.clone(),
                    scorer: self.scorer.clone(),
                };
                Ok(materialize_adapted(&meta, adaptor, p, cfg)?.layer_weights)
            }
            _ => Ok(self.layers.clone()),
        }
    }
}

/// Forward and backward over one batch; returns the summed loss and the
/// gradients in the state's registration order.
fn batch_grads(
    state: &TrainState,
    g_train: &BipartiteGraph,
    p_norm: Option<&[f64; PROPERTY_DIMS]>,
    triplets: &[(u32, u32, u32)],
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut tape = Tape::new();
    let mut leased: Vec<TensorRef> = Vec::new();
    let layer_ids: Vec<TensorRef> = state
        .layers
        .iter()
        .map(|m| lease(&mut tape, m, true))
        .collect::<Result<_>>()?;
    leased.extend(&layer_ids);
    let scorer_id = lease(&mut tape, &state.scorer, true)?;
    leased.push(scorer_id);

    let effective_layers = if let Some(adaptor) = &state.adaptor {
        let p = p_norm.ok_or_else(|| {
            Error::Config("adaptor training requires a property vector".into())
        })?;
        let adaptor_lease = lease_adaptor(&mut tape, adaptor, true)?;
        leased.push(adaptor_lease.trunk_weight);
        leased.push(adaptor_lease.trunk_bias);
        for &(w, b) in &adaptor_lease.heads {
            leased.push(w);
            leased.push(b);
        }
        let phi = adaptor_forward(&mut tape, &adaptor_lease, p)?;
        film_adapt(&mut tape, &layer_ids, &phi, cfg)?
    } else {
        layer_ids
    };

    let train_dropout = cfg.dropout > 0.0;
    let mut pos_scores = Vec::with_capacity(triplets.len());
    let mut neg_scores = Vec::with_capacity(triplets.len());
    for &(u, pos, neg) in triplets {
        let pos_seed: u64 = rng.gen();
        let neg_seed: u64 = rng.gen();
        let sub_pos = extract_local_graph(g_train, u, pos, &cfg.rwr, cfg.label_cap, pos_seed);
        let sub_neg = extract_local_graph(g_train, u, neg, &cfg.rwr, cfg.label_cap, neg_seed);
        let dropout_rng = if train_dropout { Some(&mut *rng) } else { None };
        let s_pos = score_subgraph(&mut tape, &sub_pos, &effective_layers, scorer_id, cfg, dropout_rng)?;
        let dropout_rng = if train_dropout { Some(&mut *rng) } else { None };
        let s_neg = score_subgraph(&mut tape, &sub_neg, &effective_layers, scorer_id, cfg, dropout_rng)?;
        pos_scores.push(s_pos);
        neg_scores.push(s_neg);
    }
    let loss = bpr_loss(&mut tape, &pos_scores, &neg_scores)?;
    let loss_value = tape.scalar(loss)?;
    tape.backward(loss)?;
    let grads = leased
        .iter()
        .map(|&t| tape.grad(t).map(|g| g.to_vec()))
        .collect();
    Ok((loss_value, grads))
}

/// One optimizer step over a batch; returns the summed batch loss.
fn batch_step(
    state: &mut TrainState,
    adam: &mut Adam,
    g_train: &BipartiteGraph,
    p_norm: Option<&[f64; PROPERTY_DIMS]>,
    triplets: &[(u32, u32, u32)],
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (loss, grads) = batch_grads(state, g_train, p_norm, triplets, cfg, rng)?;
    let mut refs: Vec<&mut [f64]> = Vec::new();
    for m in state.layers.iter_mut() {
        refs.push(&mut m.data);
    }
    refs.push(&mut state.scorer.data);
    if let Some(adaptor) = state.adaptor.as_mut() {
        refs.push(&mut adaptor.trunk_weight.data);
        refs.push(&mut adaptor.trunk_bias.data);
        for head in adaptor.heads.iter_mut() {
            refs.push(&mut head.weight.data);
            refs.push(&mut head.bias.data);
        }
    }
    adam.step(&mut refs, &grads)?;
    Ok(loss)
}

/// Draw `count` positive interactions from the graph's training edges,
/// without replacement when possible, with replacement (logged) when the
/// graph is too small.
fn sample_positives(
    edges: &[(u32, u32)],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(u32, u32)> {
    if edges.len() >= count {
        let mut idx: Vec<usize> = (0..edges.len()).collect();
        for k in 0..count {
            let j = rng.gen_range(k..idx.len());
            idx.swap(k, j);
        }
        idx[..count].iter().map(|&k| edges[k]).collect()
    } else {
        log::debug!(
            "graph supplies {} training edges for a batch of {count}; sampling with replacement",
            edges.len()
        );
        (0..count)
            .map(|_| edges[rng.gen_range(0..edges.len())])
            .collect()
    }
}

/// Attach one negative item per positive; a user whose candidate pool is
/// exhausted is replaced by a fresh positive, within a bounded number of
/// retries.
fn build_triplets(
    g_train: &BipartiteGraph,
    edges: &[(u32, u32)],
    exclude: impl Fn(u32) -> BTreeSet<u32>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(u32, u32, u32)>> {
    let mut triplets = Vec::with_capacity(count);
    let mut positives = sample_positives(edges, count, rng);
    let mut retries = 0usize;
    let retry_budget = 100 * count.max(1);
    while let Some((u, i)) = positives.pop() {
        match sample_negatives(g_train, u, 1, &exclude(u), rng) {
            Ok(negs) => triplets.push((u, i, negs[0])),
            Err(Error::InsufficientNegatives { .. }) => {
                retries += 1;
                if retries > retry_budget {
                    return Err(Error::Config(
                        "cannot assemble a batch: negative pools exhausted".into(),
                    ));
                }
                log::warn!("user {u} has no negative candidates; redrawing positive");
                positives.extend(sample_positives(edges, 1, rng));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(triplets)
}

struct GraphContext {
    train_graph: BipartiteGraph,
    train_edges: Vec<(u32, u32)>,
    holdout_edges: Vec<(u32, u32)>,
    /// Held-out positives per user, excluded from negative sampling so that
    /// negatives are non-interactions of the full graph.
    holdout_by_user: Vec<BTreeSet<u32>>,
    p_norm: [f64; PROPERTY_DIMS],
}

/// One fixed held-out triplet with its pinned extraction seeds.
struct HoldoutTriplet {
    graph: usize,
    user: u32,
    pos: u32,
    neg: u32,
    pos_seed: u64,
    neg_seed: u64,
}

/// Pre-train the shared model and adaptor over a corpus of interaction
/// graphs.
///
/// Per batch (one per `batch_size` samples, `samples_per_epoch / batch_size`
/// per epoch): sample a graph uniformly, derive its customized weights from
/// its normalized property vector, draw positives and negatives, and take
/// one optimizer step on the ranking loss through the whole path. Training
/// stops after `patience` epochs without held-out improvement and the
/// best-scoring parameters are returned.
pub fn pretrain(
    graphs: &[BipartiteGraph],
    model_cfg: &ModelConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if graphs.is_empty() {
        return Err(Error::Config("pre-training corpus is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }

    // Per-graph hold-out and training views.
    let mut contexts = Vec::with_capacity(graphs.len());
    for (m, g) in graphs.iter().enumerate() {
        let split = if cfg.holdout_frac > 0.0 {
            match split_dataset(g, cfg.holdout_frac, 0.0, derive_seed(cfg.seed, 100 + m as u64)) {
                Ok(s) => s,
                Err(Error::SplitInfeasible(_)) => {
                    log::warn!("graph {m}: hold-out infeasible, monitoring on training edges");
                    EdgeSplit {
                        train: g.edges().to_vec(),
                        val: vec![],
                        test: vec![],
                        seed: cfg.seed,
                    }
                }
                Err(e) => return Err(e),
            }
        } else {
            EdgeSplit {
                train: g.edges().to_vec(),
                val: vec![],
                test: vec![],
                seed: cfg.seed,
            }
        };
        let train_graph = split.train_graph(g)?;
        let mut holdout_by_user = vec![BTreeSet::new(); g.user_count()];
        for &(u, i) in &split.val {
            holdout_by_user[u as usize].insert(i);
        }
        contexts.push(GraphContext {
            train_graph,
            train_edges: split.train.clone(),
            holdout_edges: split.val.clone(),
            holdout_by_user,
            p_norm: [0.0; PROPERTY_DIMS],
        });
    }

    // Normalization statistics over the corpus, frozen into the checkpoint.
    let vectors = contexts
        .iter()
        .map(|c| compute_properties(&c.train_graph))
        .collect::<Result<Vec<_>>>()?;
    let norm = fit_norm(&vectors)?;
    for (c, pv) in contexts.iter_mut().zip(&vectors) {
        c.p_norm = normalize(pv, &norm);
    }

    let total_train: usize = contexts.iter().map(|c| c.train_edges.len()).sum();
    let total_edges: usize = graphs.iter().map(|g| g.edge_count()).sum();
    let samples = cfg
        .samples_per_epoch
        .unwrap_or_else(|| (total_train / 2).max(cfg.batch_size));
    if samples >= total_edges {
        return Err(Error::Config(format!(
            "samples_per_epoch {samples} must stay below the pooled interaction count {total_edges}"
        )));
    }
    let batches_per_epoch = (samples / cfg.batch_size).max(1);

    // Fixed held-out triplets: stable extraction seeds and negatives make
    // the convergence signal comparable across epochs.
    let mut holdout = Vec::new();
    {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x401d));
        for (m, c) in contexts.iter().enumerate() {
            for &(u, i) in &c.holdout_edges {
                let negs = match sample_negatives(&c.train_graph, u, 1, &c.holdout_by_user[u as usize], &mut rng) {
                    Ok(n) => n,
                    Err(Error::InsufficientNegatives { .. }) => continue,
                    Err(e) => return Err(e),
                };
                holdout.push(HoldoutTriplet {
                    graph: m,
                    user: u,
                    pos: i,
                    neg: negs[0],
                    pos_seed: rng.gen(),
                    neg_seed: rng.gen(),
                });
            }
        }
    }

    let mut state = TrainState {
        layers: MetaLgnnParams::init(model_cfg, derive_seed(cfg.seed, 1)).layer_weights,
        scorer: MetaLgnnParams::init(model_cfg, derive_seed(cfg.seed, 1)).scorer,
        adaptor: cfg
            .use_adaptor
            .then(|| AdaptorParams::init(model_cfg, derive_seed(cfg.seed, 2))),
    };
    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(cfg.learning_rate),
        &state.param_sizes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));

    let heldout_loss = |state: &TrainState| -> Result<f64> {
        if holdout.is_empty() {
            return Ok(f64::NAN);
        }
        let mut materialized: Vec<Option<Vec<Matrix>>> = vec![None; contexts.len()];
        let mut total = 0.0;
        for t in &holdout {
            let c = &contexts[t.graph];
            let layers = match &mut materialized[t.graph] {
                Some(l) => l,
                slot => slot.insert(state.materialized_layers(
                    state.adaptor.as_ref().map(|_| &c.p_norm),
                    model_cfg,
                )?),
            };
            let s_pos = lgnn_score(&c.train_graph, t.user, t.pos, layers, &state.scorer, model_cfg, t.pos_seed)?;
            let s_neg = lgnn_score(&c.train_graph, t.user, t.neg, layers, &state.scorer, model_cfg, t.neg_seed)?;
            total += bpr_loss_value(s_pos, s_neg);
        }
        Ok(total / holdout.len() as f64)
    };

    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, Vec<Matrix>, Matrix, Option<AdaptorParams>)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut pair_count = 0usize;
        for _ in 0..batches_per_epoch {
            let m = rng.gen_range(0..contexts.len());
            let c = &contexts[m];
            let triplets = build_triplets(
                &c.train_graph,
                &c.train_edges,
                |u| c.holdout_by_user[u as usize].clone(),
                cfg.batch_size,
                &mut rng,
            )?;
            let p = cfg.use_adaptor.then_some(&c.p_norm);
            loss_sum += batch_step(&mut state, &mut adam, &c.train_graph, p, &triplets, model_cfg, &mut rng)?;
            pair_count += cfg.batch_size;
        }
        let train_loss = loss_sum / pair_count as f64;
        let monitor = heldout_loss(&state)?;
        let signal = if monitor.is_nan() { train_loss } else { monitor };
        metrics.push(EpochMetrics {
            epoch,
            loss: train_loss,
            val: monitor,
        });
        let improved = best.as_ref().map_or(true, |(b, ..)| signal < *b);
        if improved {
            best = Some((
                signal,
                epoch,
                state.layers.clone(),
                state.scorer.clone(),
                state.adaptor.clone(),
            ));
        }
        let best_epoch = best.as_ref().map(|&(_, e, ..)| e).unwrap_or(epoch);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    let (_, best_epoch, layers, scorer, adaptor) = best.ok_or_else(|| {
        Error::Config("pre-training ran zero epochs; raise max_epochs".into())
    })?;
    Ok(PretrainOutcome {
        checkpoint: Checkpoint {
            model: *model_cfg,
            norm,
            meta: MetaLgnnParams {
                layer_weights: layers,
                scorer,
            },
            adaptor: adaptor.unwrap_or_else(|| AdaptorParams::init(model_cfg, derive_seed(cfg.seed, 2))),
        },
        metrics,
        best_epoch,
    })
}

/// Shared fine-tuning loop. Trains on the split's training partition,
/// evaluates validation hit rate per epoch (fixed negatives), and returns
/// the best-epoch materialized model. With an empty validation partition the
/// final epoch is returned and the metric column is NaN.
fn run_finetune(
    mut state: TrainState,
    p_norm: Option<[f64; PROPERTY_DIMS]>,
    target: &BipartiteGraph,
    split: &EdgeSplit,
    model_cfg: &ModelConfig,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if split.train.is_empty() {
        return Err(Error::Config("training partition is empty".into()));
    }
    let g_train = split.train_graph(target)?;
    let val_seed = derive_seed(cfg.seed, 0xE7A1);
    let has_val = !split.val.is_empty();

    let val_hr = |state: &TrainState| -> Result<f64> {
        if !has_val {
            return Ok(f64::NAN);
        }
        let layers = state.materialized_layers(p_norm.as_ref(), model_cfg)?;
        let scorer = LgnnScorer {
            graph: &g_train,
            layer_weights: &layers,
            scorer: &state.scorer,
            cfg: model_cfg,
        };
        Ok(evaluate_hr(&scorer, &g_train, split, Partition::Val, &cfg.protocol, val_seed)?.hr)
    };

    let snapshot = |state: &TrainState| -> Result<TrainedModel> {
        Ok(TrainedModel {
            model: *model_cfg,
            layer_weights: state.materialized_layers(p_norm.as_ref(), model_cfg)?,
            scorer: state.scorer.clone(),
        })
    };

    let mut adam = Adam::new(
        AdamConfig::with_learning_rate(cfg.learning_rate),
        &state.param_sizes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4));

    // The un-fine-tuned model is a selection candidate (epoch 0).
    let initial_hr = val_hr(&state)?;
    let mut best_hr = initial_hr;
    let mut best_epoch = 0usize;
    let mut best_model = snapshot(&state)?;
    let mut metrics = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let edges: Vec<(u32, u32)> = chunk.iter().map(|&k| split.train[k]).collect();
            // Fresh negatives every epoch; exclusion is graph positivity only.
            let triplets =
                build_triplets(&g_train, &edges, |_| BTreeSet::new(), edges.len(), &mut rng)?;
            loss_sum += batch_step(
                &mut state,
                &mut adam,
                &g_train,
                p_norm.as_ref(),
                &triplets,
                model_cfg,
                &mut rng,
            )?;
            pairs += triplets.len();
        }
        let hr = val_hr(&state)?;
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / pairs.max(1) as f64,
            val: hr,
        });
        if !has_val || hr > best_hr || best_hr.is_nan() {
            best_hr = hr;
            best_epoch = epoch;
            best_model = snapshot(&state)?;
        }
        if has_val && epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    Ok(FinetuneOutcome {
        model: best_model,
        metrics,
        best_epoch,
        best_val_hr: best_hr,
    })
}

/// Fine-tune a pre-trained checkpoint on a target graph. The target's
/// property vector is computed on its training partition and normalized
/// with the checkpoint's frozen statistics.
pub fn finetune(
    ckpt: &Checkpoint,
    target: &BipartiteGraph,
    split: &EdgeSplit,
    cfg: &FinetuneConfig,
    strategy: FinetuneStrategy,
) -> Result<FinetuneOutcome> {
    let g_train = split.train_graph(target)?;
    let p_norm = normalize(&compute_properties(&g_train)?, &ckpt.norm);
    match strategy {
        FinetuneStrategy::Direct => {
            let adapted = materialize_adapted(&ckpt.meta, &ckpt.adaptor, &p_norm, &ckpt.model)?;
            let state = TrainState {
                layers: adapted.layer_weights,
                scorer: ckpt.meta.scorer.clone(),
                adaptor: None,
            };
            run_finetune(state, None, target, split, &ckpt.model, cfg)
        }
        FinetuneStrategy::Joint => {
            let state = TrainState {
                layers: ckpt.meta.layer_weights.clone(),
                scorer: ckpt.meta.scorer.clone(),
                adaptor: Some(ckpt.adaptor.clone()),
            };
            run_finetune(state, Some(p_norm), target, split, &ckpt.model, cfg)
        }
    }
}

/// Train the scorer from random initialization on the target graph alone;
/// no adaptor, no transferred knowledge.
pub fn train_from_scratch(
    target: &BipartiteGraph,
    split: &EdgeSplit,
    model_cfg: &ModelConfig,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let init = MetaLgnnParams::init(model_cfg, derive_seed(cfg.seed, 5));
    let state = TrainState {
        layers: init.layer_weights,
        scorer: init.scorer,
        adaptor: None,
    };
    run_finetune(state, None, target, split, model_cfg, cfg)
}

/// Frozen normalization applied to a target training graph; exposed for the
/// experiment runners.
pub fn normalized_target_properties(
    ckpt: &Checkpoint,
    target: &BipartiteGraph,
    split: &EdgeSplit,
) -> CoreResult<[f64; PROPERTY_DIMS]> {
    let g_train = split.train_graph(target)?;
    Ok(normalize(&compute_properties(&g_train)?, &ckpt.norm))
}

/// Names of the parameters each mode exposes to the optimizer; used by the
/// registry audit tests and kept next to the state definition so the two
/// cannot drift.
pub fn trainable_parameter_names(layers: usize, with_adaptor: bool) -> Vec<String> {
    let state = TrainState {
        layers: (0..layers).map(|_| Matrix::zeros(1, 1)).collect(),
        scorer: Matrix::zeros(1, 1),
        adaptor: with_adaptor.then(|| AdaptorParams {
            trunk_weight: Matrix::zeros(1, 1),
            trunk_bias: Matrix::zeros(1, 1),
            heads: (0..layers)
                .map(|_| crate::model::AdaptorHead {
                    weight: Matrix::zeros(1, 1),
                    bias: Matrix::zeros(1, 1),
                })
                .collect(),
        }),
    };
    state.trainable_names()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, SynthConfig};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            label_cap: 6,
            hidden: 4,
            layers: 2,
            trunk_width: 4,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn small_corpus(n: usize) -> Vec<BipartiteGraph> {
        (0..n)
            .map(|k| {
                gen_synthetic(&SynthConfig {
                    user_count: 16,
                    item_count: 16,
                    target_density: 0.15,
                    preferential_exponent: 0.5 * k as f64,
                    seed: 50 + k as u64,
                })
                .unwrap()
            })
            .collect()
    }

    fn quick_pretrain_cfg() -> PretrainConfig {
        PretrainConfig {
            batch_size: 16,
            samples_per_epoch: Some(32),
            learning_rate: 0.01,
            max_epochs: 3,
            patience: 5,
            holdout_frac: 0.1,
            use_adaptor: true,
            seed: 99,
        }
    }

    /// Protocol sized for 16-item test graphs.
    fn tiny_protocol() -> EvalProtocol {
        EvalProtocol {
            k: 2,
            negatives_per_positive: 5,
            seeds: vec![1],
        }
    }

    #[test]
    fn bpr_loss_matches_closed_forms() {
        let mut tape = Tape::new();
        // Equal scores: ln 2 per pair.
        let a = tape.constant(1, 1, vec![0.6]).unwrap();
        let b = tape.constant(1, 1, vec![0.6]).unwrap();
        let loss = bpr_loss(&mut tape, &[a, a], &[b, b]).unwrap();
        let v = tape.scalar(loss).unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // Large positive margin drives the loss toward zero; any finite
        // margin keeps it strictly positive.
        let hi = tape.constant(1, 1, vec![30.0]).unwrap();
        let lo = tape.constant(1, 1, vec![0.0]).unwrap();
        let tiny = bpr_loss(&mut tape, &[hi], &[lo]).unwrap();
        let tv = tape.scalar(tiny).unwrap();
        assert!(tv > 0.0 && tv < 1e-12, "loss {tv}");
        assert!(bpr_loss_value(0.9, 0.1) > 0.0);
    }

    #[test]
    fn batch_composition_is_exact() {
        let g = small_corpus(1).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // More samples than edges: replacement kicks in, count still exact.
        let b = 3 * g.edge_count();
        let triplets =
            build_triplets(&g, g.edges(), |_| BTreeSet::new(), b, &mut rng).unwrap();
        assert_eq!(triplets.len(), b);
        for &(u, pos, neg) in &triplets {
            assert!(g.has_edge(u, pos), "positive must be an interaction");
            assert!(!g.has_edge(u, neg), "negative must not be an interaction");
        }
    }

    #[test]
    fn pretrain_is_deterministic() {
        let corpus = small_corpus(2);
        let cfg = quick_pretrain_cfg();
        let model_cfg = tiny_model();
        let a = pretrain(&corpus, &model_cfg, &cfg).unwrap();
        let b = pretrain(&corpus, &model_cfg, &cfg).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        }
    }

    #[test]
    fn pretrain_without_adaptor_keeps_it_at_identity() {
        let corpus = small_corpus(1);
        let model_cfg = tiny_model();
        let cfg = PretrainConfig {
            use_adaptor: false,
            ..quick_pretrain_cfg()
        };
        let out = pretrain(&corpus, &model_cfg, &cfg).unwrap();
        let reference = AdaptorParams::init(&model_cfg, derive_seed(cfg.seed, 2));
        assert_eq!(out.checkpoint.adaptor, reference, "adaptor must stay untouched");
        // With zero heads the customized weights equal the shared weights.
        let adapted = materialize_adapted(
            &out.checkpoint.meta,
            &out.checkpoint.adaptor,
            &[0.5; PROPERTY_DIMS],
            &model_cfg,
        )
        .unwrap();
        assert_eq!(adapted.layer_weights, out.checkpoint.meta.layer_weights);
    }

    #[test]
    fn adaptor_identity_start_gives_same_first_loss() {
        // At the identity initialization the modulation path is a no-op, so
        // the first batch loss matches plain shared-model training on the
        // same RNG stream. One batch per epoch: from the second batch on,
        // the adaptor has moved and the paths legitimately diverge.
        let corpus = small_corpus(1);
        let model_cfg = tiny_model();
        let single_batch = PretrainConfig {
            max_epochs: 1,
            samples_per_epoch: Some(16),
            ..quick_pretrain_cfg()
        };
        let with = pretrain(&corpus, &model_cfg, &single_batch).unwrap();
        let without = pretrain(
            &corpus,
            &model_cfg,
            &PretrainConfig {
                use_adaptor: false,
                ..single_batch
            },
        )
        .unwrap();
        assert_eq!(
            with.metrics[0].loss.to_bits(),
            without.metrics[0].loss.to_bits()
        );
    }

    #[test]
    fn training_loss_beats_the_random_scorer_level() {
        // ln 2 is the loss of a scorer with no preference; a few epochs on a
        // small corpus must land strictly below it.
        let corpus = small_corpus(2);
        let model_cfg = tiny_model();
        let cfg = PretrainConfig {
            max_epochs: 25,
            samples_per_epoch: Some(64),
            patience: 25,
            ..quick_pretrain_cfg()
        };
        let out = pretrain(&corpus, &model_cfg, &cfg).unwrap();
        let last = out.metrics.last().unwrap();
        assert!(
            last.loss < std::f64::consts::LN_2,
            "per-pair loss {} did not beat ln 2",
            last.loss
        );
    }

    #[test]
    fn gradients_reach_the_adaptor() {
        let corpus = small_corpus(1);
        let model_cfg = tiny_model();
        let g = &corpus[0];
        let state = TrainState {
            layers: MetaLgnnParams::init(&model_cfg, 1).layer_weights,
            scorer: MetaLgnnParams::init(&model_cfg, 1).scorer,
            adaptor: Some(AdaptorParams::init(&model_cfg, 2)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let triplets = build_triplets(g, g.edges(), |_| BTreeSet::new(), 8, &mut rng).unwrap();
        let p = [0.2; PROPERTY_DIMS];
        let (_, grads) = batch_grads(&state, g, Some(&p), &triplets, &model_cfg, &mut rng).unwrap();
        let names = state.trainable_names();
        assert_eq!(grads.len(), names.len());
        // Head weights sit behind the zero initialization but still receive
        // gradient; every layer and the scorer must too.
        for (name, grad) in names.iter().zip(&grads) {
            let grad = grad.as_ref().unwrap_or_else(|| panic!("{name} missing gradient"));
            let norm: f64 = grad.iter().map(|g| g * g).sum();
            if name.contains("head") && name.ends_with(".w") || name == "delta" || name.starts_with("layer") {
                assert!(norm > 0.0, "{name} has zero gradient");
            }
        }
    }

    #[test]
    fn parameter_registry_per_mode() {
        // Direct fine-tuning exposes only layers and scorer; pre-training
        // and joint fine-tuning add the adaptor.
        assert_eq!(
            trainable_parameter_names(2, false),
            vec!["layer0", "layer1", "delta"]
        );
        assert_eq!(
            trainable_parameter_names(2, true),
            vec![
                "layer0",
                "layer1",
                "delta",
                "adaptor.trunk_w",
                "adaptor.trunk_b",
                "adaptor.head0.w",
                "adaptor.head0.b",
                "adaptor.head1.w",
                "adaptor.head1.b",
            ]
        );
    }

    #[test]
    fn direct_finetune_leaves_checkpoint_untouched_and_zero_epochs_is_identity() {
        let corpus = small_corpus(2);
        let model_cfg = tiny_model();
        let out = pretrain(&corpus, &model_cfg, &quick_pretrain_cfg()).unwrap();
        let ckpt = out.checkpoint;
        let target = gen_synthetic(&SynthConfig {
            user_count: 16,
            item_count: 16,
            target_density: 0.2,
            preferential_exponent: 0.0,
            seed: 77,
        })
        .unwrap();
        let split = split_dataset(&target, 0.1, 0.1, 5).unwrap();
        let ckpt_before = ckpt.clone();
        let cfg = FinetuneConfig {
            batch_size: 16,
            max_epochs: 0,
            seed: 3,
            protocol: tiny_protocol(),
            ..FinetuneConfig::default()
        };
        let ft = finetune(&ckpt, &target, &split, &cfg, FinetuneStrategy::Direct).unwrap();
        assert_eq!(ckpt, ckpt_before);
        // Zero epochs: the returned model is exactly the customized one.
        let p = normalized_target_properties(&ckpt, &target, &split).unwrap();
        let adapted = materialize_adapted(&ckpt.meta, &ckpt.adaptor, &p, &model_cfg).unwrap();
        assert_eq!(ft.model.layer_weights, adapted.layer_weights);
        assert_eq!(ft.model.scorer, ckpt.meta.scorer);
        assert_eq!(ft.best_epoch, 0);
    }

    #[test]
    fn finetune_decreases_train_loss() {
        let corpus = small_corpus(2);
        let model_cfg = tiny_model();
        let ckpt = pretrain(&corpus, &model_cfg, &quick_pretrain_cfg())
            .unwrap()
            .checkpoint;
        let target = gen_synthetic(&SynthConfig {
            user_count: 20,
            item_count: 20,
            target_density: 0.15,
            preferential_exponent: 0.5,
            seed: 31,
        })
        .unwrap();
        let split = split_dataset(&target, 0.05, 0.05, 9).unwrap();
        let cfg = FinetuneConfig {
            batch_size: 32,
            learning_rate: 0.01,
            max_epochs: 30,
            patience: 30,
            seed: 11,
            protocol: tiny_protocol(),
            ..FinetuneConfig::default()
        };
        for strategy in [FinetuneStrategy::Direct, FinetuneStrategy::Joint] {
            let out = finetune(&ckpt, &target, &split, &cfg, strategy).unwrap();
            let first = out.metrics.first().unwrap().loss;
            let last = out.metrics.last().unwrap().loss;
            assert!(
                last < first,
                "{strategy:?}: loss went {first} -> {last} without improving"
            );
        }
    }

    #[test]
    fn joint_finetune_moves_the_adaptor_gradient() {
        // One joint step from the identity initialization must produce a
        // nonzero gradient on the adaptor heads (checked above) and change
        // the materialized weights relative to direct fine-tuning's handle.
        let corpus = small_corpus(1);
        let model_cfg = tiny_model();
        let ckpt = pretrain(&corpus, &model_cfg, &quick_pretrain_cfg())
            .unwrap()
            .checkpoint;
        let target = &corpus[0];
        let split = split_dataset(target, 0.1, 0.1, 2).unwrap();
        let cfg = FinetuneConfig {
            batch_size: 8,
            max_epochs: 2,
            seed: 21,
            protocol: tiny_protocol(),
            ..FinetuneConfig::default()
        };
        let joint = finetune(&ckpt, target, &split, &cfg, FinetuneStrategy::Joint).unwrap();
        // The checkpoint itself must stay frozen.
        let reloaded = pretrain(&corpus, &model_cfg, &quick_pretrain_cfg())
            .unwrap()
            .checkpoint;
        assert_eq!(ckpt, reloaded);
        assert_eq!(joint.model.layer_weights.len(), model_cfg.layers);
    }

    #[test]
    fn scratch_training_is_deterministic() {
        let target = gen_synthetic(&SynthConfig {
            user_count: 16,
            item_count: 16,
            target_density: 0.2,
            preferential_exponent: 0.0,
            seed: 13,
        })
        .unwrap();
        let split = split_dataset(&target, 0.1, 0.1, 4).unwrap();
        let model_cfg = tiny_model();
        let cfg = FinetuneConfig {
            batch_size: 16,
            max_epochs: 3,
            seed: 8,
            protocol: tiny_protocol(),
            ..FinetuneConfig::default()
        };
        let a = train_from_scratch(&target, &split, &model_cfg, &cfg).unwrap();
        let b = train_from_scratch(&target, &split, &model_cfg, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn early_stop_bookkeeping_tracks_running_minimum() {
        // The recorded best epoch must always carry the prefix-minimum of
        // the monitoring signal.
        let corpus = small_corpus(2);
        let model_cfg = tiny_model();
        let cfg = PretrainConfig {
            max_epochs: 8,
            patience: 3,
            ..quick_pretrain_cfg()
        };
        let out = pretrain(&corpus, &model_cfg, &cfg).unwrap();
        let signals: Vec<f64> = out.metrics.iter().map(|m| m.val).collect();
        let best_idx = signals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k + 1)
            .unwrap();
        assert_eq!(out.best_epoch, best_idx);
        // Stop rule: the run never continues more than `patience` epochs
        // past its best.
        assert!(out.metrics.len() <= best_idx + cfg.patience);
    }
}
