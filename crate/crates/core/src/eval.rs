//! Hit-rate evaluation protocol, scorer interfaces, multi-seed aggregation,
//! and the ablation experiment runner.
//!
//! Each evaluated interaction is ranked against sampled non-interactions:
//! 49 negatives are drawn for the user (excluding every known positive from
//! any partition), all 50 candidates are scored, and the interaction counts
//! as a hit when its pessimistic rank (ties count against it) is within the
//! top k. Negative candidate sets depend only on (seed, edge index), so
//! every scorer sees identical candidates.

use crate::error::{Error, Result};
use crate::graph::{sample_negatives, BipartiteGraph};
use crate::model::{lgnn_score, materialize_adapted, Matrix, MetaLgnnParams, ModelConfig};
use crate::props::{compute_properties, normalize};
use crate::split::EdgeSplit;
use crate::train::{finetune, pretrain, train_from_scratch, FinetuneConfig, FinetuneStrategy, PretrainConfig};
use crate::{derive_seed, Result as CoreResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::fmt;

/// Ranking protocol: top-k hit rate against sampled negatives, averaged
/// over seeds. Ties are broken pessimistically (the true item loses).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    pub k: usize,
    pub negatives_per_positive: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            k: 5,
            negatives_per_positive: 49,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.k >= 1 + self.negatives_per_positive {
            return Err(Error::Config(format!(
                "k = {} must be below the candidate count {}",
                self.k,
                1 + self.negatives_per_positive
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("protocol needs at least one seed".into()));
        }
        Ok(())
    }
}

/// Anything that can score a (user, item) pair. The seed pins any internal
/// randomness (subgraph sampling), making scores reproducible.
pub trait PairScorer: Sync {
    fn score_pair(&self, user: u32, item: u32, seed: u64) -> Result<f64>;
}

/// Local-subgraph GNN scorer over a fixed (training) graph.
pub struct LgnnScorer<'a> {
    pub graph: &'a BipartiteGraph,
    pub layer_weights: &'a [Matrix],
    pub scorer: &'a Matrix,
    pub cfg: &'a ModelConfig,
}

impl PairScorer for LgnnScorer<'_> {
    fn score_pair(&self, user: u32, item: u32, seed: u64) -> Result<f64> {
        lgnn_score(
            self.graph,
            user,
            item,
            self.layer_weights,
            self.scorer,
            self.cfg,
            seed,
        )
    }
}

/// Scores drawn uniformly from [0, 1); the analytic baseline for HR@k is
/// k / (1 + negatives).
pub struct RandomScorer;

impl PairScorer for RandomScorer {
    fn score_pair(&self, user: u32, item: u32, seed: u64) -> Result<f64> {
        let mixed = derive_seed(derive_seed(seed, user as u64), item as u64);
        Ok(ChaCha8Rng::seed_from_u64(mixed).gen::<f64>())
    }
}

/// Same score for every pair; under pessimistic ties the hit rate is 0.
pub struct ConstantScorer(pub f64);

impl PairScorer for ConstantScorer {
    fn score_pair(&self, _user: u32, _item: u32, _seed: u64) -> Result<f64> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrOutcome {
    pub hr: f64,
    pub hits: usize,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Hit rate of a scorer over one hold-out partition.
///
/// Per edge `k` of the partition: draw `negatives_per_positive` items the
/// user never interacted with in any partition (RNG stream derived from
/// `(seed, k)`), score the true item and the negatives with per-candidate
/// seeds, and count a hit when at most `k - 1` negatives score at or above
/// the true item. Users with too few candidate negatives are skipped with a
/// logged warning. Edges evaluate in parallel and reduce in index order.
pub fn evaluate_hr(
    scorer: &dyn PairScorer,
    g_train: &BipartiteGraph,
    split: &EdgeSplit,
    partition: Partition,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<HrOutcome> {
    protocol.validate()?;
    let edges = match partition {
        Partition::Val => &split.val,
        Partition::Test => &split.test,
    };
    if edges.is_empty() {
        return Err(Error::Protocol("partition holds no edges".into()));
    }
    // Known positives across every partition, per user.
    let mut positives: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); g_train.user_count()];
    for (u, i) in split.all_edges() {
        positives[u as usize].insert(i);
    }

    let outcomes: Vec<Option<bool>> = edges
        .par_iter()
        .enumerate()
        .map(|(idx, &(u, i))| -> Result<Option<bool>> {
            let pool = g_train.item_count() - positives[u as usize].len();
            if pool < protocol.negatives_per_positive {
                log::warn!(
                    "skipping test case for user {u}: {pool} candidate negatives < {}",
                    protocol.negatives_per_positive
                );
                return Ok(None);
            }
            let edge_seed = derive_seed(seed, idx as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(edge_seed, 0));
            let negatives = sample_negatives(
                g_train,
                u,
                protocol.negatives_per_positive,
                &positives[u as usize],
                &mut rng,
            )?;
            let s_true = scorer.score_pair(u, i, derive_seed(edge_seed, 1))?;
            let mut beaten_by = 0;
            for (j, &neg) in negatives.iter().enumerate() {
                let s_neg = scorer.score_pair(u, neg, derive_seed(edge_seed, 2 + j as u64))?;
                if s_neg >= s_true {
                    beaten_by += 1;
                }
            }
            // Pessimistic rank = 1 + beaten_by.
            Ok(Some(beaten_by + 1 <= protocol.k))
        })
        .collect::<Result<_>>()?;

    let evaluated = outcomes.iter().flatten().count();
    let hits = outcomes.iter().flatten().filter(|&&hit| hit).count();
    let skipped = outcomes.len() - evaluated;
    if evaluated == 0 {
        return Err(Error::Protocol(
            "no test case had enough candidate negatives".into(),
        ));
    }
    Ok(HrOutcome {
        hr: hits as f64 / evaluated as f64,
        hits,
        evaluated,
        skipped,
    })
}

/// Mean and sample standard deviation of a metric over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl SeedSummary {
    /// The paper-style `mean±std` form with the metric scaled to percent,
    /// e.g. `60.94±1.46`.
    pub fn percent(&self) -> String {
        format!("{:.2}\u{b1}{:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

/// Run one experiment per seed and aggregate.
pub fn run_seeds(
    seeds: &[u64],
    mut experiment: impl FnMut(u64) -> CoreResult<f64>,
) -> CoreResult<SeedSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        per_seed.push((seed, experiment(seed)?));
    }
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().map(|&(_, v)| v).sum::<f64>() / n;
    let std = if per_seed.len() < 2 {
        0.0
    } else {
        let ss: f64 = per_seed.iter().map(|&(_, v)| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Ok(SeedSummary {
        per_seed,
        mean,
        std,
    })
}

/// Configuration of the full ablation experiment.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub protocol: EvalProtocol,
}

pub const ABLATION_VARIANTS: [&str; 5] = [
    "random-init",
    "meta-lgnn",
    "customized-gnn",
    "adapt-d",
    "adapt-j",
];

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub summary: SeedSummary,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>12}", "variant", "test-HR@5")?;
        for row in &self.rows {
            writeln!(f, "{:<16} {:>12}", row.variant, row.summary.percent())?;
        }
        Ok(())
    }
}

impl AblationReport {
    /// Machine-readable lines: `variant <name> seed <s> hr <v>` per run plus
    /// `variant <name> mean <m> std <d>` per variant.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for &(seed, hr) in &row.summary.per_seed {
                out.push_str(&format!("variant {} seed {seed} hr {hr:.17e}\n", row.variant));
            }
            out.push_str(&format!(
                "variant {} mean {:.17e} std {:.17e}\n",
                row.variant, row.summary.mean, row.summary.std
            ));
        }
        out
    }
}

/// Pre-train once on the corpus, then compare five variants on the target:
/// random initialization, the shared pre-trained model, the customized model
/// (both without fine-tuning), and the two fine-tuning strategies. Hit rates
/// are test-partition HR@k aggregated over the protocol seeds.
pub fn ablation_suite(
    corpus: &[BipartiteGraph],
    target: &BipartiteGraph,
    split: &EdgeSplit,
    cfg: &AblationConfig,
) -> Result<AblationReport> {
    cfg.protocol.validate()?;
    let outcome = pretrain(corpus, &cfg.model, &cfg.pretrain)?;
    let ckpt = outcome.checkpoint;
    let g_train = split.train_graph(target)?;
    let p_norm = normalize(&compute_properties(&g_train)?, &ckpt.norm);
    let customized = materialize_adapted(&ckpt.meta, &ckpt.adaptor, &p_norm, &ckpt.model)?;

    let eval_frozen = |layers: &[Matrix], scorer: &Matrix, seed: u64| -> Result<f64> {
        let s = LgnnScorer {
            graph: &g_train,
            layer_weights: layers,
            scorer,
            cfg: &ckpt.model,
        };
        Ok(evaluate_hr(&s, &g_train, split, Partition::Test, &cfg.protocol, seed)?.hr)
    };

    let mut rows = Vec::new();
    let seeds = &cfg.protocol.seeds;
    rows.push(AblationRow {
        variant: "random-init",
        summary: run_seeds(seeds, |seed| {
            let fresh = MetaLgnnParams::init(&ckpt.model, derive_seed(seed, 0xAB1));
            eval_frozen(&fresh.layer_weights, &fresh.scorer, seed)
        })?,
    });
    rows.push(AblationRow {
        variant: "meta-lgnn",
        summary: run_seeds(seeds, |seed| {
            eval_frozen(&ckpt.meta.layer_weights, &ckpt.meta.scorer, seed)
        })?,
    });
    rows.push(AblationRow {
        variant: "customized-gnn",
        summary: run_seeds(seeds, |seed| {
            eval_frozen(&customized.layer_weights, &ckpt.meta.scorer, seed)
        })?,
    });
    for (variant, strategy) in [
        ("adapt-d", FinetuneStrategy::Direct),
        ("adapt-j", FinetuneStrategy::Joint),
    ] {
        rows.push(AblationRow {
            variant,
            summary: run_seeds(seeds, |seed| {
                let ft_cfg = FinetuneConfig {
                    seed: derive_seed(seed, 0xF7),
                    ..cfg.finetune.clone()
                };
                let out = finetune(&ckpt, target, split, &ft_cfg, strategy)?;
                eval_frozen(&out.model.layer_weights, &out.model.scorer, seed)
            })?,
        });
    }
    Ok(AblationReport { rows })
}

/// Train the scorer from scratch on the target (no pre-training, no adaptor)
/// and report test HR; the from-scratch arm of the transfer experiments.
pub fn from_scratch_test_hr(
    target: &BipartiteGraph,
    split: &EdgeSplit,
    model_cfg: &ModelConfig,
    ft_cfg: &FinetuneConfig,
    eval_seed: u64,
) -> Result<f64> {
    let out = train_from_scratch(target, split, model_cfg, ft_cfg)?;
    let g_train = split.train_graph(target)?;
    let s = LgnnScorer {
        graph: &g_train,
        layer_weights: &out.model.layer_weights,
        scorer: &out.model.scorer,
        cfg: model_cfg,
    };
    Ok(evaluate_hr(&s, &g_train, split, Partition::Test, &ft_cfg.protocol, eval_seed)?.hr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::split_dataset;
    use crate::synth::{gen_synthetic, SynthConfig};

    fn fixture() -> (BipartiteGraph, EdgeSplit) {
        let g = gen_synthetic(&SynthConfig {
            user_count: 30,
            item_count: 80,
            target_density: 0.1,
            preferential_exponent: 0.3,
            seed: 6,
        })
        .unwrap();
        let split = split_dataset(&g, 0.05, 0.1, 3).unwrap();
        (g, split)
    }

    /// Scores the true item highest by construction.
    struct OracleScorer<'a> {
        split: &'a EdgeSplit,
    }

    impl PairScorer for OracleScorer<'_> {
        fn score_pair(&self, user: u32, item: u32, _seed: u64) -> Result<f64> {
            Ok(if self.split.all_edges().any(|e| e == (user, item)) {
                1.0
            } else {
                0.0
            })
        }
    }

    #[test]
    fn perfect_scorer_hits_everything() {
        let (g, split) = fixture();
        let g_train = split.train_graph(&g).unwrap();
        let scorer = OracleScorer { split: &split };
        let out = evaluate_hr(
            &scorer,
            &g_train,
            &split,
            Partition::Test,
            &EvalProtocol::default(),
            7,
        )
        .unwrap();
        assert_eq!(out.hr, 1.0);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn constant_scorer_never_hits_under_pessimistic_ties() {
        let (g, split) = fixture();
        let g_train = split.train_graph(&g).unwrap();
        let out = evaluate_hr(
            &ConstantScorer(0.42),
            &g_train,
            &split,
            Partition::Test,
            &EvalProtocol::default(),
            7,
        )
        .unwrap();
        assert_eq!(out.hr, 0.0);
    }

    #[test]
    fn random_scorer_sits_near_one_tenth() {
        // Large graph so >= 1000 test edges evaluate quickly with a trivial
        // scorer; expectation is k / 50 = 0.10.
        let g = gen_synthetic(&SynthConfig {
            user_count: 200,
            item_count: 300,
            target_density: 0.12,
            preferential_exponent: 0.0,
            seed: 10,
        })
        .unwrap();
        let split = split_dataset(&g, 0.0, 0.15, 5).unwrap();
        assert!(split.test.len() >= 1000, "need >= 1000 evaluated edges");
        let g_train = split.train_graph(&g).unwrap();
        let out = evaluate_hr(
            &RandomScorer,
            &g_train,
            &split,
            Partition::Test,
            &EvalProtocol::default(),
            11,
        )
        .unwrap();
        assert!(
            (out.hr - 0.10).abs() <= 0.03,
            "random scorer HR {} outside 0.10 +- 0.03",
            out.hr
        );
    }

    #[test]
    fn negatives_are_never_known_positives() {
        // A scorer that records its candidates and fails the test if any
        // negative collides with a positive of the user.
        struct CheckingScorer<'a> {
            positives: Vec<BTreeSet<u32>>,
            split: &'a EdgeSplit,
        }
        impl PairScorer for CheckingScorer<'_> {
            fn score_pair(&self, user: u32, item: u32, _seed: u64) -> Result<f64> {
                let is_positive = self.positives[user as usize].contains(&item);
                let is_true_pair = self
                    .split
                    .test
                    .iter()
                    .chain(&self.split.val)
                    .any(|&e| e == (user, item));
                // Candidates are either the true pair or genuine negatives.
                assert!(
                    !is_positive || is_true_pair,
                    "negative candidate ({user},{item}) is a known positive"
                );
                Ok(0.5)
            }
        }
        let (g, split) = fixture();
        let g_train = split.train_graph(&g).unwrap();
        let mut positives = vec![BTreeSet::new(); g.user_count()];
        for (u, i) in split.all_edges() {
            positives[u as usize].insert(i);
        }
        let scorer = CheckingScorer {
            positives,
            split: &split,
        };
        // HR value irrelevant; the assertions run inside the scorer.
        let _ = evaluate_hr(
            &scorer,
            &g_train,
            &split,
            Partition::Test,
            &EvalProtocol::default(),
            13,
        )
        .unwrap();
    }

    #[test]
    fn evaluation_is_pure_given_seed() {
        let (g, split) = fixture();
        let g_train = split.train_graph(&g).unwrap();
        let p = EvalProtocol::default();
        let a = evaluate_hr(&RandomScorer, &g_train, &split, Partition::Test, &p, 21).unwrap();
        let b = evaluate_hr(&RandomScorer, &g_train, &split, Partition::Test, &p, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn improving_true_score_never_decreases_hr() {
        // Boost scorer: same negatives, true pair score raised.
        struct Boost<'a> {
            split: &'a EdgeSplit,
            boost: f64,
        }
        impl PairScorer for Boost<'_> {
            fn score_pair(&self, user: u32, item: u32, seed: u64) -> Result<f64> {
                let base = RandomScorer.score_pair(user, item, seed)?;
                Ok(
                    if self.split.test.iter().any(|&e| e == (user, item)) {
                        base + self.boost
                    } else {
                        base
                    },
                )
            }
        }
        let (g, split) = fixture();
        let g_train = split.train_graph(&g).unwrap();
        let p = EvalProtocol::default();
        let mut previous = 0.0;
        for boost in [0.0, 0.2, 0.5, 1.0] {
            let scorer = Boost {
                split: &split,
                boost,
            };
            let hr = evaluate_hr(&scorer, &g_train, &split, Partition::Test, &p, 9)
                .unwrap()
                .hr;
            assert!(hr >= previous, "boost {boost}: hr {hr} < {previous}");
            previous = hr;
        }
        assert_eq!(previous, 1.0, "full boost ranks the true item first");
    }

    #[test]
    fn too_few_negatives_skips_and_errors_when_nothing_evaluates() {
        // 3 items total: nobody can supply 49 negatives.
        let g = gen_synthetic(&SynthConfig {
            user_count: 6,
            item_count: 3,
            target_density: 0.5,
            preferential_exponent: 0.0,
            seed: 2,
        })
        .unwrap();
        let split = split_dataset(&g, 0.0, 0.2, 4).unwrap();
        let g_train = split.train_graph(&g).unwrap();
        let err = evaluate_hr(
            &ConstantScorer(0.0),
            &g_train,
            &split,
            Partition::Test,
            &EvalProtocol::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn run_seeds_aggregates_mean_and_std() {
        let summary = run_seeds(&[1, 2, 3, 4, 5], |seed| Ok(seed as f64 / 10.0)).unwrap();
        assert_eq!(summary.per_seed.len(), 5);
        assert!((summary.mean - 0.3).abs() < 1e-12);
        // Sample std of {0.1, 0.2, 0.3, 0.4, 0.5}: sqrt(0.1 / 4).
        let expected_std = (0.1f64 / 4.0).sqrt();
        assert!((summary.std - expected_std).abs() < 1e-9, "{}", summary.std);
        // Deterministic experiment: zero spread.
        let flat = run_seeds(&[1, 2, 3], |_| Ok(0.25)).unwrap();
        assert_eq!(flat.std, 0.0);
    }

    #[test]
    fn percent_formatting_matches_table_convention() {
        let summary = SeedSummary {
            per_seed: vec![],
            mean: 0.6094,
            std: 0.0146,
        };
        assert_eq!(summary.percent(), "60.94\u{b1}1.46");
    }

    #[test]
    fn protocol_validation() {
        let bad = EvalProtocol {
            k: 50,
            negatives_per_positive: 49,
            seeds: vec![1],
        };
        assert!(bad.validate().is_err());
        assert!(EvalProtocol::default().validate().is_ok());
    }
}
