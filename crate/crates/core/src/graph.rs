//! Immutable user–item interaction graph with dual CSR adjacency.
//!
//! Users and items are densely reindexed at construction; the original
//! identifiers are preserved in order-of-first-occurrence maps. Every edge
//! joins a user index to an item index, so bipartiteness holds by
//! construction, and both CSR structures always describe the same edge set.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

/// Compressed sparse rows; neighbor lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    fn build(row_count: usize, pairs: impl Iterator<Item = (u32, u32)> + Clone) -> Self {
        let mut offsets = vec![0usize; row_count + 1];
        for (row, _) in pairs.clone() {
            offsets[row as usize + 1] += 1;
        }
        for i in 0..row_count {
            offsets[i + 1] += offsets[i];
        }
        let mut targets = vec![0u32; offsets[row_count]];
        let mut cursor = offsets.clone();
        for (row, col) in pairs {
            targets[cursor[row as usize]] = col;
            cursor[row as usize] += 1;
        }
        for row in 0..row_count {
            targets[offsets[row]..offsets[row + 1]].sort_unstable();
        }
        Self { offsets, targets }
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }
}

/// A node of the bipartite graph, tagged by side.
///
/// The derived ordering (users before items, each side by index) is the
/// canonical node order used by subgraph extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    User(u32),
    Item(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    edges: Vec<(u32, u32)>,
    user_adj: Csr,
    item_adj: Csr,
}

impl BipartiteGraph {
    /// Build from identifier maps and a deduplicated edge list. Edges must
    /// reference indices below the respective id map lengths.
    pub fn new(user_ids: Vec<String>, item_ids: Vec<String>, edges: Vec<(u32, u32)>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let (nu, ni) = (user_ids.len() as u32, item_ids.len() as u32);
        let mut seen = BTreeSet::new();
        for &(u, i) in &edges {
            if u >= nu || i >= ni {
                return Err(Error::Config(format!(
                    "edge ({u},{i}) out of bounds for {nu} users x {ni} items"
                )));
            }
            if !seen.insert((u, i)) {
                return Err(Error::Config(format!("duplicate edge ({u},{i})")));
            }
        }
        let user_adj = Csr::build(user_ids.len(), edges.iter().copied());
        let item_adj = Csr::build(item_ids.len(), edges.iter().map(|&(u, i)| (i, u)));
        Ok(Self {
            user_ids,
            item_ids,
            edges,
            user_adj,
            item_adj,
        })
    }

    /// Same node sets and id maps, different edge subset. Used to view a
    /// training partition as a graph while keeping the parent's indexing.
    pub fn with_edges(&self, edges: Vec<(u32, u32)>) -> Result<Self> {
        Self::new(self.user_ids.clone(), self.item_ids.clone(), edges)
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn node_count(&self) -> usize {
        self.user_count() + self.item_count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn user_id(&self, u: u32) -> &str {
        &self.user_ids[u as usize]
    }

    pub fn item_id(&self, i: u32) -> &str {
        &self.item_ids[i as usize]
    }

    /// Items interacted with by `u`, ascending.
    pub fn user_items(&self, u: u32) -> &[u32] {
        self.user_adj.row(u as usize)
    }

    /// Users who interacted with `i`, ascending.
    pub fn item_users(&self, i: u32) -> &[u32] {
        self.item_adj.row(i as usize)
    }

    pub fn user_degree(&self, u: u32) -> usize {
        self.user_adj.degree(u as usize)
    }

    pub fn item_degree(&self, i: u32) -> usize {
        self.item_adj.degree(i as usize)
    }

    pub fn has_edge(&self, u: u32, i: u32) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }

    /// Degree of a node regardless of side.
    pub fn degree(&self, node: Node) -> usize {
        match node {
            Node::User(u) => self.user_degree(u),
            Node::Item(i) => self.item_degree(i),
        }
    }

    /// Neighbors of a node; always nodes of the other side.
    pub fn neighbors(&self, node: Node) -> impl Iterator<Item = Node> + '_ {
        let (slice, item_side): (&[u32], bool) = match node {
            Node::User(u) => (self.user_items(u), true),
            Node::Item(i) => (self.item_users(i), false),
        };
        slice.iter().map(move |&n| {
            if item_side {
                Node::Item(n)
            } else {
                Node::User(n)
            }
        })
    }
}

/// Accumulates records and assigns dense indices in first-occurrence order.
#[derive(Default)]
pub struct GraphBuilder {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    edges: Vec<(u32, u32)>,
    seen: BTreeSet<(u32, u32)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, user: &str, item: &str) {
        let u = match self.user_index.get(user) {
            Some(&u) => u,
            None => {
                let u = self.user_ids.len() as u32;
                self.user_ids.push(user.to_string());
                self.user_index.insert(user.to_string(), u);
                u
            }
        };
        let i = match self.item_index.get(item) {
            Some(&i) => i,
            None => {
                let i = self.item_ids.len() as u32;
                self.item_ids.push(item.to_string());
                self.item_index.insert(item.to_string(), i);
                i
            }
        };
        if self.seen.insert((u, i)) {
            self.edges.push((u, i));
        }
    }

    pub fn finish(self) -> Result<BipartiteGraph> {
        BipartiteGraph::new(self.user_ids, self.item_ids, self.edges)
    }
}

/// Field separator for edge-list input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// Any run of ASCII whitespace.
    #[default]
    Whitespace,
    Char(char),
}

/// Read a delimited edge list: one interaction per line, first field the user
/// id, second the item id, extra fields ignored. Lines starting with '#' and
/// blank lines are skipped. Duplicate records collapse to one edge.
pub fn load_edge_list(reader: impl BufRead, delimiter: Delimiter) -> Result<BipartiteGraph> {
    let mut builder = GraphBuilder::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = match delimiter {
            Delimiter::Whitespace => SplitFields::Whitespace(trimmed.split_whitespace()),
            Delimiter::Char(c) => SplitFields::Char(trimmed.split(c)),
        };
        let user = fields.next().map(str::trim).unwrap_or("");
        let item = fields.next().map(str::trim).unwrap_or("");
        if user.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "missing user field".into(),
            });
        }
        if item.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "missing item field".into(),
            });
        }
        builder.add(user, item);
    }
    builder.finish()
}

enum SplitFields<'a> {
    Whitespace(std::str::SplitWhitespace<'a>),
    Char(std::str::Split<'a, char>),
}

impl<'a> Iterator for SplitFields<'a> {
    type Item = &'a str;
    fn next(&mut self) -> Option<&'a str> {
        match self {
            SplitFields::Whitespace(it) => it.next(),
            SplitFields::Char(it) => it.next(),
        }
    }
}

/// Write the graph as a tab-separated edge list that [`load_edge_list`]
/// reads back to an identical graph (edges are emitted in stored order, so
/// first-occurrence indexing is preserved).
pub fn serialize_edge_list(g: &BipartiteGraph, mut writer: impl Write) -> Result<()> {
    writeln!(writer, "# bipartite edge list: user_id<TAB>item_id")?;
    for &(u, i) in g.edges() {
        writeln!(writer, "{}\t{}", g.user_id(u), g.item_id(i))?;
    }
    Ok(())
}

/// `n` distinct items the user has not interacted with in `g` and that are
/// not in `exclude`, drawn uniformly from the candidate pool without
/// replacement.
pub fn sample_negatives(
    g: &BipartiteGraph,
    user: u32,
    n: usize,
    exclude: &BTreeSet<u32>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>> {
    let positives = g.user_items(user);
    let mut pool: Vec<u32> = (0..g.item_count() as u32)
        .filter(|i| positives.binary_search(i).is_err() && !exclude.contains(i))
        .collect();
    if pool.len() < n {
        return Err(Error::InsufficientNegatives {
            user,
            needed: n,
            available: pool.len(),
        });
    }
    // Partial Fisher-Yates: the first n slots end up a uniform sample.
    for k in 0..n {
        let j = rng.gen_range(k..pool.len());
        pool.swap(k, j);
    }
    pool.truncate(n);
    Ok(pool)
}
