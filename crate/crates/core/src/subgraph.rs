//! Local graph extraction around a target user-item pair.
//!
//! Two random walks with restart, one from each target, sample a neighbor
//! set; the union induces the local graph. The direct (user, item) edge, if
//! present, is removed before labeling and before the subgraph reaches the
//! model, so a positive pair cannot be recognized by the label shortcut of
//! being at distance 1.
//!
//! Each node receives a positional label from its shortest-path distances
//! `d_u`, `d_i` to the two targets on the pruned subgraph:
//! `1 + min(d_u, d_i) + (d/2)^2` with `d = d_u + d_i` under integer floor
//! division. Targets are fixed to 1; nodes that cannot reach both targets
//! get the reserved label 0; labels are capped at [`DEFAULT_LABEL_CAP`].

use crate::graph::{BipartiteGraph, Node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

/// Largest positional label; anything larger maps onto the cap.
pub const DEFAULT_LABEL_CAP: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwrConfig {
    /// Probability of jumping back to the walk's start node at each step.
    pub restart_prob: f64,
    /// Steps taken per walk.
    pub walk_steps: usize,
    /// Distinct nodes collected per walk before it stops early.
    pub max_nodes_per_side: usize,
}

impl Default for RwrConfig {
    fn default() -> Self {
        Self {
            restart_prob: 0.5,
            walk_steps: 100,
            max_nodes_per_side: 50,
        }
    }
}

/// Nodes visited by a random walk with restart from `start`. The start node
/// is always included; an isolated start yields just itself.
pub fn rwr_sample(
    g: &BipartiteGraph,
    start: Node,
    cfg: &RwrConfig,
    seed: u64,
) -> BTreeSet<Node> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visited = BTreeSet::from([start]);
    if g.degree(start) == 0 {
        return visited;
    }
    let mut current = start;
    for _ in 0..cfg.walk_steps {
        if visited.len() >= cfg.max_nodes_per_side {
            break;
        }
        if rng.gen::<f64>() < cfg.restart_prob || g.degree(current) == 0 {
            current = start;
        } else {
            let step = rng.gen_range(0..g.degree(current));
            current = g.neighbors(current).nth(step).expect("degree checked");
        }
        visited.insert(current);
    }
    visited
}

/// Extracted neighborhood around a target pair, pruned of the direct edge,
/// with positional labels assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSubgraph {
    /// Parent-graph nodes in canonical order: users ascending, then items.
    pub nodes: Vec<Node>,
    /// Undirected induced edges over local indices (user side first).
    pub edges: Vec<(u32, u32)>,
    /// Symmetric adjacency lists over local indices.
    pub adj: Vec<Vec<u32>>,
    /// Local index of the target user / target item.
    pub target_u: u32,
    pub target_i: u32,
    /// Positional label per local node.
    pub labels: Vec<u32>,
}

impl LocalSubgraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Side of a local node, from the parent node tag.
    pub fn is_user_side(&self, local: u32) -> bool {
        matches!(self.nodes[local as usize], Node::User(_))
    }

    /// Debug text form: one `node` line per node (side, parent index, label)
    /// and one `edge` line per local edge.
    pub fn to_debug_string(&self) -> String {
        let mut out = String::new();
        for (k, node) in self.nodes.iter().enumerate() {
            let (side, idx) = match node {
                Node::User(u) => ("user", u),
                Node::Item(i) => ("item", i),
            };
            let mark = if k as u32 == self.target_u || k as u32 == self.target_i {
                " target"
            } else {
                ""
            };
            writeln!(out, "node {k} {side} {idx} label {}{mark}", self.labels[k]).unwrap();
        }
        for &(a, b) in &self.edges {
            writeln!(out, "edge {a} {b}").unwrap();
        }
        out
    }
}

/// Extract the local graph around `(u, i)`. The pair's direct edge, when it
/// exists, is excluded from the induced subgraph. The two walks use RNG
/// streams derived from `seed`, so extraction is a pure function of
/// `(graph, u, i, cfg, seed)`.
pub fn extract_local_graph(
    g: &BipartiteGraph,
    u: u32,
    i: u32,
    cfg: &RwrConfig,
    label_cap: u32,
    seed: u64,
) -> LocalSubgraph {
    let mut nodes = rwr_sample(g, Node::User(u), cfg, crate::derive_seed(seed, 0));
    nodes.extend(rwr_sample(g, Node::Item(i), cfg, crate::derive_seed(seed, 1)));

    let node_list: Vec<Node> = nodes.into_iter().collect();
    let local = |node: Node| -> Option<u32> {
        node_list.binary_search(&node).ok().map(|k| k as u32)
    };
    let target_u = local(Node::User(u)).expect("walk start present");
    let target_i = local(Node::Item(i)).expect("walk start present");

    let mut edges = Vec::new();
    let mut adj = vec![Vec::new(); node_list.len()];
    for (a, node) in node_list.iter().enumerate() {
        let &Node::User(pu) = node else { continue };
        for &pi in g.user_items(pu) {
            if pu == u && pi == i {
                continue; // leakage guard: drop the target edge itself
            }
            if let Some(b) = local(Node::Item(pi)) {
                edges.push((a as u32, b));
                adj[a].push(b);
                adj[b as usize].push(a as u32);
            }
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
    }

    let labels = labels_from_adj(&adj, target_u, target_i, label_cap);
    LocalSubgraph {
        nodes: node_list,
        edges,
        adj,
        target_u,
        target_i,
        labels,
    }
}

/// Recompute positional labels of a subgraph from its stored adjacency.
pub fn drnl_label(sub: &LocalSubgraph, label_cap: u32) -> Vec<u32> {
    labels_from_adj(&sub.adj, sub.target_u, sub.target_i, label_cap)
}

fn labels_from_adj(adj: &[Vec<u32>], target_u: u32, target_i: u32, cap: u32) -> Vec<u32> {
    let du = local_bfs(adj, target_u);
    let di = local_bfs(adj, target_i);
    (0..adj.len())
        .map(|t| {
            if t as u32 == target_u || t as u32 == target_i {
                return 1;
            }
            match (du[t], di[t]) {
                (Some(a), Some(b)) => {
                    let d = a + b;
                    let label = 1 + a.min(b) + (d / 2) * (d / 2);
                    (label as u32).min(cap)
                }
                _ => 0,
            }
        })
        .collect()
}

fn local_bfs(adj: &[Vec<u32>], start: u32) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[start as usize] = Some(0);
    let mut queue = VecDeque::from([start as usize]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have distances");
        for &w in &adj[v] {
            if dist[w as usize].is_none() {
                dist[w as usize] = Some(d + 1);
                queue.push_back(w as usize);
            }
        }
    }
    dist
}
