//! Plain-text persistence of a graph with its train/val/test partitions.
//!
//! ```text
//! adapt-manifest v1
//! seed <split seed>
//! users <count>
//! items <count>
//! user <original id>     (one per user, in dense index order)
//! item <original id>
//! train <user index> <item index>
//! val <user index> <item index>
//! test <user index> <item index>
//! ```
//!
//! Rewriting a loaded manifest reproduces it byte for byte.

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::split::EdgeSplit;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub graph: BipartiteGraph,
    pub split: EdgeSplit,
}

impl Manifest {
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "adapt-manifest v1")?;
        writeln!(w, "seed {}", self.split.seed)?;
        writeln!(w, "users {}", self.graph.user_count())?;
        writeln!(w, "items {}", self.graph.item_count())?;
        for u in 0..self.graph.user_count() as u32 {
            writeln!(w, "user {}", self.graph.user_id(u))?;
        }
        for i in 0..self.graph.item_count() as u32 {
            writeln!(w, "item {}", self.graph.item_id(i))?;
        }
        for (label, edges) in [
            ("train", &self.split.train),
            ("val", &self.split.val),
            ("test", &self.split.test),
        ] {
            for &(u, i) in edges {
                writeln!(w, "{label} {u} {i}")?;
            }
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        fn bad(msg: impl Into<String>) -> Error {
            Error::Format {
                what: "manifest",
                msg: msg.into(),
            }
        }
        let mut lines = r.lines();
        let header = lines.next().transpose()?.ok_or_else(|| bad("empty file"))?;
        if header.trim() != "adapt-manifest v1" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut seed = 0u64;
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad line {line:?}")))?;
            match key {
                "seed" => seed = rest.parse().map_err(|_| bad("bad seed"))?,
                "users" | "items" => {} // counts are implied by the id lists
                "user" => user_ids.push(rest.to_string()),
                "item" => item_ids.push(rest.to_string()),
                "train" | "val" | "test" => {
                    let (a, b) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("bad edge line {line:?}")))?;
                    let edge = (
                        a.parse().map_err(|_| bad("bad user index"))?,
                        b.parse().map_err(|_| bad("bad item index"))?,
                    );
                    match key {
                        "train" => train.push(edge),
                        "val" => val.push(edge),
                        _ => test.push(edge),
                    }
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let split = EdgeSplit {
            train,
            val,
            test,
            seed,
        };
        let edges: Vec<(u32, u32)> = split.all_edges().collect();
        let graph = BipartiteGraph::new(user_ids, item_ids, edges)?;
        Ok(Self { graph, split })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
