//! Train/validation/test partitioning and training-set sparsification.
//!
//! Both operations preserve the cold-start constraint: every user and item
//! that appears in a validation or test edge keeps at least one training
//! edge, and sparsification never strands a node that had training edges.

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train: Vec<(u32, u32)>,
    pub val: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    pub seed: u64,
}

impl EdgeSplit {
    /// Every edge of every partition.
    pub fn all_edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .copied()
    }

    /// The training partition viewed as a graph over the parent's node sets.
    pub fn train_graph(&self, parent: &BipartiteGraph) -> Result<BipartiteGraph> {
        parent.with_edges(self.train.clone())
    }
}

/// Candidate draws allowed per requested hold-out edge count before the split
/// is declared infeasible.
const RESAMPLE_FACTOR: usize = 100;

/// Partition edges into train/val/test with `round(frac * |E|)` hold-out
/// sizes. Hold-out edges are drawn uniformly at random; a candidate whose
/// removal would leave one of its endpoints without a training edge is
/// resampled, up to `100 * |E|` draws.
pub fn split_dataset(
    g: &BipartiteGraph,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<EdgeSplit> {
    if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Config(format!(
            "hold-out fractions must be in [0,1): val {val_frac}, test {test_frac}"
        )));
    }
    if val_frac + test_frac >= 1.0 {
        return Err(Error::Config(format!(
            "val_frac + test_frac must be < 1, got {}",
            val_frac + test_frac
        )));
    }
    let total = g.edge_count();
    let n_val = (val_frac * total as f64).round() as usize;
    let n_test = (test_frac * total as f64).round() as usize;
    let wanted = n_val + n_test;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<(u32, u32)> = g.edges().to_vec();
    let mut user_deg: Vec<usize> = (0..g.user_count() as u32).map(|u| g.user_degree(u)).collect();
    let mut item_deg: Vec<usize> = (0..g.item_count() as u32).map(|i| g.item_degree(i)).collect();

    let mut holdout = Vec::with_capacity(wanted);
    let budget = RESAMPLE_FACTOR * total;
    let mut draws = 0;
    while holdout.len() < wanted {
        if draws >= budget {
            return Err(Error::SplitInfeasible(format!(
                "drew {draws} candidates for {wanted} hold-out edges without satisfying the \
                 cold-start constraint"
            )));
        }
        draws += 1;
        let k = rng.gen_range(0..pool.len());
        let (u, i) = pool[k];
        if user_deg[u as usize] >= 2 && item_deg[i as usize] >= 2 {
            user_deg[u as usize] -= 1;
            item_deg[i as usize] -= 1;
            pool.swap_remove(k);
            holdout.push((u, i));
        }
    }

    let mut val: Vec<(u32, u32)> = holdout[..n_val].to_vec();
    let mut test: Vec<(u32, u32)> = holdout[n_val..].to_vec();
    let mut train = pool;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(EdgeSplit {
        train,
        val,
        test,
        seed,
    })
}

/// Drop training edges down to `ceil(keep_frac * |train|)`, never removing a
/// node's last training edge. Validation and test partitions are untouched.
///
/// Edges are visited in a seeded shuffle order and dropped greedily while both
/// endpoints retain training degree >= 2; degrees only decrease, so a single
/// pass decides feasibility.
pub fn sparsify_train(split: &EdgeSplit, keep_frac: f64, seed: u64) -> Result<EdgeSplit> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Error::Config(format!(
            "keep_frac must be in (0,1], got {keep_frac}"
        )));
    }
    if keep_frac == 1.0 {
        return Ok(split.clone());
    }
    let total = split.train.len();
    let target = (keep_frac * total as f64).ceil() as usize;
    let to_drop = total - target;
    if to_drop == 0 {
        return Ok(split.clone());
    }

    let max_user = split.all_edges().map(|(u, _)| u).max().unwrap_or(0) as usize;
    let max_item = split.all_edges().map(|(_, i)| i).max().unwrap_or(0) as usize;
    let mut user_deg = vec![0usize; max_user + 1];
    let mut item_deg = vec![0usize; max_item + 1];
    for &(u, i) in &split.train {
        user_deg[u as usize] += 1;
        item_deg[i as usize] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);

    let mut dropped = vec![false; total];
    let mut drop_count = 0;
    for idx in order {
        if drop_count == to_drop {
            break;
        }
        let (u, i) = split.train[idx];
        if user_deg[u as usize] >= 2 && item_deg[i as usize] >= 2 {
            user_deg[u as usize] -= 1;
            item_deg[i as usize] -= 1;
            dropped[idx] = true;
            drop_count += 1;
        }
    }
    if drop_count < to_drop {
        return Err(Error::SparsifyInfeasible {
            kept: total - drop_count,
            target,
        });
    }

    let train: Vec<(u32, u32)> = split
        .train
        .iter()
        .zip(&dropped)
        .filter(|(_, &d)| !d)
        .map(|(&e, _)| e)
        .collect();
    Ok(EdgeSplit {
        train,
        val: split.val.clone(),
        test: split.test.clone(),
        seed: split.seed,
    })
}
