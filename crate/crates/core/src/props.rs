//! Structural graph properties that condition the adaptor.
//!
//! Eight statistics per graph: node count, edge count, user-item ratio,
//! density, degree assortativity, Robins-Alexander clustering, connected
//! components, and global efficiency. Degenerate cases map to finite
//! values: assortativity falls back to 0 when an endpoint-degree sequence
//! has zero variance, and disconnected pairs contribute 0 to efficiency.

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

pub const PROPERTY_DIMS: usize = 8;
pub const PROPERTY_NAMES: [&str; PROPERTY_DIMS] = [
    "node_count",
    "edge_count",
    "user_item_ratio",
    "density",
    "degree_assortativity",
    "robins_alexander_clustering",
    "connected_components",
    "global_efficiency",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyVector {
    pub node_count: usize,
    pub edge_count: usize,
    pub user_item_ratio: f64,
    pub density: f64,
    pub degree_assortativity: f64,
    pub robins_alexander_clustering: f64,
    pub connected_components: usize,
    pub global_efficiency: f64,
}

impl PropertyVector {
    pub fn to_array(&self) -> [f64; PROPERTY_DIMS] {
        [
            self.node_count as f64,
            self.edge_count as f64,
            self.user_item_ratio,
            self.density,
            self.degree_assortativity,
            self.robins_alexander_clustering,
            self.connected_components as f64,
            self.global_efficiency,
        ]
    }

    pub fn write_key_values(&self, mut w: impl Write) -> Result<()> {
        for (name, value) in PROPERTY_NAMES.iter().zip(self.to_array()) {
            writeln!(w, "{name} {value:.17e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PropsConfig {
    /// Largest node count for which global efficiency runs exact all-pairs BFS.
    pub exact_efficiency_cap: usize,
    /// Ordered node pairs sampled above the cap.
    pub efficiency_sample_pairs: usize,
    /// Internal seed of the pair sampler; fixed so the estimate is a pure
    /// function of the graph.
    pub efficiency_seed: u64,
}

impl Default for PropsConfig {
    fn default() -> Self {
        Self {
            exact_efficiency_cap: 2000,
            efficiency_sample_pairs: 10_000,
            efficiency_seed: 0x5EED_EFF1,
        }
    }
}

pub fn compute_properties(g: &BipartiteGraph) -> Result<PropertyVector> {
    compute_properties_with(g, &PropsConfig::default())
}

pub fn compute_properties_with(g: &BipartiteGraph, cfg: &PropsConfig) -> Result<PropertyVector> {
    if g.edge_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    Ok(PropertyVector {
        node_count: g.node_count(),
        edge_count: g.edge_count(),
        user_item_ratio: g.user_count() as f64 / g.item_count() as f64,
        density: g.edge_count() as f64 / (g.user_count() * g.item_count()) as f64,
        degree_assortativity: degree_assortativity(g),
        robins_alexander_clustering: robins_alexander_clustering(g),
        connected_components: connected_components(g),
        global_efficiency: global_efficiency(g, cfg),
    })
}

/// Pearson correlation of endpoint degrees over the edge multiset, each
/// undirected edge contributing both orientations. If either per-side
/// endpoint-degree sequence is constant (e.g. any biregular graph), the
/// correlation is degenerate and 0 is returned.
pub fn degree_assortativity(g: &BipartiteGraph) -> f64 {
    let m = g.edge_count() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let (mut sum_u, mut sum_i) = (0.0, 0.0);
    let (mut sq_u, mut sq_i) = (0.0, 0.0);
    let mut sum_prod = 0.0;
    for &(u, i) in g.edges() {
        let du = g.user_degree(u) as f64;
        let di = g.item_degree(i) as f64;
        sum_u += du;
        sum_i += di;
        sq_u += du * du;
        sq_i += di * di;
        sum_prod += du * di;
    }
    let var_u = sq_u / m - (sum_u / m) * (sum_u / m);
    let var_i = sq_i / m - (sum_i / m) * (sum_i / m);
    if var_u <= 1e-12 || var_i <= 1e-12 {
        return 0.0;
    }
    // Orientation-symmetrized Pearson: both orientations share mean and
    // variance, so the symmetric sums suffice.
    let n = 2.0 * m;
    let mean = (sum_u + sum_i) / n;
    let var = (sq_u + sq_i) / n - mean * mean;
    let cov = 2.0 * sum_prod / n - mean * mean;
    cov / var
}

/// 4 * (number of 4-cycles) / (number of 3-edge paths); 0 when the graph has
/// no 3-edge path. Cycles are counted once, paths as undirected vertex
/// sequences.
pub fn robins_alexander_clustering(g: &BipartiteGraph) -> f64 {
    // Paths of three edges: choose a middle edge (u,i) and extend both ways.
    let mut l3: u64 = 0;
    for &(u, i) in g.edges() {
        l3 += (g.user_degree(u) as u64 - 1) * (g.item_degree(i) as u64 - 1);
    }
    if l3 == 0 {
        return 0.0;
    }
    // 4-cycles: pairs of users with c common items contribute C(c,2).
    let mut common: HashMap<(u32, u32), u64> = HashMap::new();
    for i in 0..g.item_count() as u32 {
        let users = g.item_users(i);
        for a in 0..users.len() {
            for b in a + 1..users.len() {
                *common.entry((users[a], users[b])).or_insert(0) += 1;
            }
        }
    }
    let c4: u64 = common.values().map(|&c| c * (c - 1) / 2).sum();
    4.0 * c4 as f64 / l3 as f64
}

fn global_index(g: &BipartiteGraph, node: Node) -> usize {
    match node {
        Node::User(u) => u as usize,
        Node::Item(i) => g.user_count() + i as usize,
    }
}

fn node_of(g: &BipartiteGraph, global: usize) -> Node {
    if global < g.user_count() {
        Node::User(global as u32)
    } else {
        Node::Item((global - g.user_count()) as u32)
    }
}

/// BFS distances from `start` to every node; `usize::MAX` marks unreachable.
fn bfs_distances(g: &BipartiteGraph, start: usize) -> Vec<usize> {
    let n = g.node_count();
    let mut dist = vec![usize::MAX; n];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        for nb in g.neighbors(node_of(g, v)) {
            let w = global_index(g, nb);
            if dist[w] == usize::MAX {
                dist[w] = d + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

pub fn connected_components(g: &BipartiteGraph) -> usize {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            for nb in g.neighbors(node_of(g, v)) {
                let w = global_index(g, nb);
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    components
}

/// Mean of 1/d(u,v) over ordered pairs of distinct nodes; disconnected pairs
/// contribute 0. Exact up to the configured cap, otherwise estimated from
/// uniformly sampled ordered pairs.
pub fn global_efficiency(g: &BipartiteGraph, cfg: &PropsConfig) -> f64 {
    let n = g.node_count();
    if n < 2 {
        return 0.0;
    }
    if n <= cfg.exact_efficiency_cap {
        let mut total = 0.0;
        for v in 0..n {
            for (w, &d) in bfs_distances(g, v).iter().enumerate() {
                if w != v && d != usize::MAX {
                    total += 1.0 / d as f64;
                }
            }
        }
        total / (n * (n - 1)) as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.efficiency_seed);
        let mut total = 0.0;
        let mut cache: HashMap<usize, Vec<usize>> = HashMap::new();
        for _ in 0..cfg.efficiency_sample_pairs {
            let v = rng.gen_range(0..n);
            let mut w = rng.gen_range(0..n - 1);
            if w >= v {
                w += 1;
            }
            let dist = cache.entry(v).or_insert_with(|| bfs_distances(g, v));
            if dist[w] != usize::MAX {
                total += 1.0 / dist[w] as f64;
            }
        }
        total / cfg.efficiency_sample_pairs as f64
    }
}

/// Per-dimension mean and standard deviation over a corpus of property
/// vectors. A zero standard deviation is replaced by 1 when applied.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; PROPERTY_DIMS],
    pub std: [f64; PROPERTY_DIMS],
}

/// Fit z-scoring statistics (population standard deviation) over a corpus.
pub fn fit_norm(corpus: &[PropertyVector]) -> Result<NormStats> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot fit normalization on an empty corpus".into()));
    }
    let n = corpus.len() as f64;
    let mut mean = [0.0; PROPERTY_DIMS];
    for pv in corpus {
        for (m, v) in mean.iter_mut().zip(pv.to_array()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = [0.0; PROPERTY_DIMS];
    for pv in corpus {
        for (k, v) in pv.to_array().into_iter().enumerate() {
            var[k] += (v - mean[k]) * (v - mean[k]);
        }
    }
    let mut std = [0.0; PROPERTY_DIMS];
    for k in 0..PROPERTY_DIMS {
        std[k] = (var[k] / n).sqrt();
    }
    Ok(NormStats { mean, std })
}

/// Z-score a property vector with frozen statistics; dimensions whose fitted
/// standard deviation is 0 use 1 instead.
pub fn normalize(pv: &PropertyVector, stats: &NormStats) -> [f64; PROPERTY_DIMS] {
    let mut out = pv.to_array();
    for k in 0..PROPERTY_DIMS {
        let std = if stats.std[k] > 0.0 { stats.std[k] } else { 1.0 };
        out[k] = (out[k] - stats.mean[k]) / std;
    }
    out
}

impl NormStats {
    pub fn write_key_values(&self, mut w: impl Write) -> Result<()> {
        for (k, name) in PROPERTY_NAMES.iter().enumerate() {
            writeln!(w, "mean.{name} {:.17e}", self.mean[k])?;
            writeln!(w, "std.{name} {:.17e}", self.std[k])?;
        }
        Ok(())
    }

    pub fn read_key_values(r: impl BufRead) -> Result<Self> {
        let mut mean = [f64::NAN; PROPERTY_DIMS];
        let mut std = [f64::NAN; PROPERTY_DIMS];
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(' ').ok_or_else(|| Error::Format {
                what: "norm stats",
                msg: format!("expected 'key value', got {line:?}"),
            })?;
            let parsed: f64 = value.trim().parse().map_err(|_| Error::Format {
                what: "norm stats",
                msg: format!("bad number {value:?}"),
            })?;
            let (kind, name) = key.split_once('.').ok_or_else(|| Error::Format {
                what: "norm stats",
                msg: format!("expected 'mean.<name>' or 'std.<name>', got {key:?}"),
            })?;
            let idx = PROPERTY_NAMES
                .iter()
                .position(|&n| n == name)
                .ok_or_else(|| Error::Format {
                    what: "norm stats",
                    msg: format!("unknown property {name:?}"),
                })?;
            match kind {
                "mean" => mean[idx] = parsed,
                "std" => std[idx] = parsed,
                other => {
                    return Err(Error::Format {
                        what: "norm stats",
                        msg: format!("unknown prefix {other:?}"),
                    })
                }
            }
        }
        if mean.iter().chain(std.iter()).any(|v| v.is_nan()) {
            return Err(Error::Format {
                what: "norm stats",
                msg: "missing dimensions".into(),
            });
        }
        Ok(Self { mean, std })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{load_edge_list, Delimiter};
    use crate::synth::{gen_synthetic, SynthConfig};
    use std::io::Cursor;

    fn graph_from(text: &str) -> BipartiteGraph {
        load_edge_list(Cursor::new(text), Delimiter::Char(',')).unwrap()
    }

    fn complete(u: usize, i: usize) -> BipartiteGraph {
        gen_synthetic(&SynthConfig {
            user_count: u,
            item_count: i,
            target_density: 1.0,
            preferential_exponent: 0.0,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn complete_k23_basic_fields() {
        let pv = compute_properties(&complete(2, 3)).unwrap();
        assert_eq!(pv.node_count, 5);
        assert_eq!(pv.edge_count, 6);
        assert!((pv.user_item_ratio - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pv.density, 1.0);
        assert_eq!(pv.connected_components, 1);
    }

    #[test]
    fn k22_clustering_is_one() {
        // One 4-cycle, four 3-edge paths: 4 * 1 / 4 = 1.
        let pv = compute_properties(&complete(2, 2)).unwrap();
        assert_eq!(pv.robins_alexander_clustering, 1.0);
    }

    #[test]
    fn trees_have_zero_clustering() {
        let g = graph_from("u,a\nu,b\nv,b\nv,c\n"); // a path, C4-free
        assert_eq!(robins_alexander_clustering(&g), 0.0);
    }

    #[test]
    fn path_graph_efficiency() {
        // u - i - v: pairs at distance 1, 1, 2 -> (1 + 1 + 1/2) / 3 = 5/6.
        let g = graph_from("u,i\nv,i\n");
        let pv = compute_properties(&g).unwrap();
        assert!((pv.global_efficiency - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn biregular_assortativity_is_zero() {
        assert_eq!(degree_assortativity(&complete(2, 2)), 0.0);
        assert_eq!(degree_assortativity(&complete(3, 4)), 0.0);
    }

    #[test]
    fn assortativity_matches_pearson_oracle() {
        let g = graph_from("u1,i1\nu1,i2\nu2,i1\n");
        // Oracle: plain Pearson over the six oriented endpoint-degree pairs.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &(u, i) in g.edges() {
            let du = g.user_degree(u) as f64;
            let di = g.item_degree(i) as f64;
            xs.push(du);
            ys.push(di);
            xs.push(di);
            ys.push(du);
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let oracle = cov / (vx.sqrt() * vy.sqrt());
        assert!((degree_assortativity(&g) - oracle).abs() < 1e-12);
    }

    #[test]
    fn components_counts_disconnected_blocks() {
        let g = graph_from("a,x\nb,y\nc,z\n");
        assert_eq!(connected_components(&g), 3);
    }

    #[test]
    fn empty_graph_is_an_error() {
        // Constructing an empty graph is already impossible; exercise the
        // guard through a train view with no edges.
        let g = graph_from("a,x\n");
        assert!(g.with_edges(vec![]).is_err());
    }

    #[test]
    fn sampled_efficiency_within_three_standard_errors_of_exact() {
        let g = gen_synthetic(&SynthConfig {
            user_count: 40,
            item_count: 40,
            target_density: 0.05,
            preferential_exponent: 0.5,
            seed: 5,
        })
        .unwrap();
        let exact = global_efficiency(&g, &PropsConfig::default());
        let sample_cfg = PropsConfig {
            exact_efficiency_cap: 0, // force sampling
            efficiency_sample_pairs: 20_000,
            efficiency_seed: 99,
        };
        let sampled = global_efficiency(&g, &sample_cfg);
        // 1/d lies in [0,1]; bound the standard error by 0.5/sqrt(n).
        let se = 0.5 / (sample_cfg.efficiency_sample_pairs as f64).sqrt();
        assert!(
            (exact - sampled).abs() <= 3.0 * se,
            "exact {exact} vs sampled {sampled} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn permutation_invariance() {
        let g = gen_synthetic(&SynthConfig {
            user_count: 15,
            item_count: 12,
            target_density: 0.2,
            preferential_exponent: 1.0,
            seed: 13,
        })
        .unwrap();
        // Relabel: reverse both index spaces.
        let nu = g.user_count() as u32;
        let ni = g.item_count() as u32;
        let edges: Vec<(u32, u32)> = g
            .edges()
            .iter()
            .map(|&(u, i)| (nu - 1 - u, ni - 1 - i))
            .collect();
        let relabeled = g.with_edges(edges).unwrap();
        let a = compute_properties(&g).unwrap().to_array();
        let b = compute_properties(&relabeled).unwrap().to_array();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn fit_norm_single_vector_normalizes_to_zero() {
        let pv = compute_properties(&complete(3, 3)).unwrap();
        let stats = fit_norm(std::slice::from_ref(&pv)).unwrap();
        assert_eq!(normalize(&pv, &stats), [0.0; PROPERTY_DIMS]);
    }

    #[test]
    fn two_vector_corpus_z_scores_to_plus_minus_one() {
        let a = compute_properties(&complete(2, 2)).unwrap();
        let mut b = a.clone();
        b.edge_count += 10; // move one dimension only
        let stats = fit_norm(&[a.clone(), b.clone()]).unwrap();
        let za = normalize(&a, &stats);
        let zb = normalize(&b, &stats);
        let k = 1; // edge_count dimension
        assert!((za[k] + 1.0).abs() < 1e-12);
        assert!((zb[k] - 1.0).abs() < 1e-12);
        // Untouched dimensions fall back to std 1 and normalize to zero.
        assert_eq!(za[0], 0.0);
    }

    #[test]
    fn normalized_corpus_has_mean_zero_std_one() {
        let corpus: Vec<PropertyVector> = (0..6)
            .map(|seed| {
                let g = gen_synthetic(&SynthConfig {
                    user_count: 10 + 3 * seed as usize,
                    item_count: 8 + 2 * seed as usize,
                    target_density: 0.2 + 0.05 * seed as f64,
                    preferential_exponent: 0.3 * seed as f64,
                    seed: seed as u64,
                })
                .unwrap();
                compute_properties(&g).unwrap()
            })
            .collect();
        let stats = fit_norm(&corpus).unwrap();
        let normalized: Vec<[f64; PROPERTY_DIMS]> =
            corpus.iter().map(|pv| normalize(pv, &stats)).collect();
        let n = normalized.len() as f64;
        for k in 0..PROPERTY_DIMS {
            let mean: f64 = normalized.iter().map(|z| z[k]).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "dimension {k} mean {mean}");
            if stats.std[k] > 0.0 {
                let var: f64 = normalized.iter().map(|z| z[k] * z[k]).sum::<f64>() / n;
                assert!((var - 1.0).abs() < 1e-9, "dimension {k} variance {var}");
            }
        }
    }

    #[test]
    fn norm_stats_round_trip() {
        let corpus = [
            compute_properties(&complete(2, 3)).unwrap(),
            compute_properties(&complete(4, 2)).unwrap(),
        ];
        let stats = fit_norm(&corpus).unwrap();
        let mut buf = Vec::new();
        stats.write_key_values(&mut buf).unwrap();
        let back = NormStats::read_key_values(Cursor::new(buf)).unwrap();
        for k in 0..PROPERTY_DIMS {
            assert_eq!(stats.mean[k].to_bits(), back.mean[k].to_bits());
            assert_eq!(stats.std[k].to_bits(), back.std[k].to_bits());
        }
    }
}
