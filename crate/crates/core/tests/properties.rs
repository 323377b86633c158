//! Property-based invariants over the data layer.

use adapt_core::graph::{load_edge_list, sample_negatives, Delimiter, GraphBuilder, Node};
use adapt_core::split::{sparsify_train, split_dataset};
use adapt_core::subgraph::{rwr_sample, RwrConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Cursor;

/// Arbitrary small interaction sets as (user, item) id pairs.
fn interactions() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..12, 0u8..12), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_then_load_is_identity(records in interactions()) {
        let mut builder = GraphBuilder::new();
        for (u, i) in &records {
            builder.add(&format!("user-{u}"), &format!("item-{i}"));
        }
        let g = builder.finish().unwrap();
        let mut buf = Vec::new();
        adapt_core::graph::serialize_edge_list(&g, &mut buf).unwrap();
        let g2 = load_edge_list(Cursor::new(buf), Delimiter::Whitespace).unwrap();
        prop_assert_eq!(g.edges(), g2.edges());
        prop_assert_eq!(g.user_count(), g2.user_count());
        prop_assert_eq!(g.item_count(), g2.item_count());
    }

    #[test]
    fn split_and_sparsify_never_strand_holdout_nodes(
        records in interactions(),
        seed in 0u64..500,
    ) {
        let mut builder = GraphBuilder::new();
        for (u, i) in &records {
            builder.add(&format!("u{u}"), &format!("i{i}"));
        }
        let g = builder.finish().unwrap();
        let Ok(split) = split_dataset(&g, 0.1, 0.1, seed) else {
            return Ok(()); // infeasible splits are allowed to error
        };
        // Partition exactness.
        let mut all: Vec<_> = split.all_edges().collect();
        all.sort_unstable();
        let mut orig = g.edges().to_vec();
        orig.sort_unstable();
        prop_assert_eq!(&all, &orig);
        let check = |edges: &[(u32, u32)]| {
            let users: BTreeSet<u32> = edges.iter().map(|&(u, _)| u).collect();
            let items: BTreeSet<u32> = edges.iter().map(|&(_, i)| i).collect();
            for &(u, i) in split.val.iter().chain(&split.test) {
                assert!(users.contains(&u) && items.contains(&i));
            }
        };
        check(&split.train);
        if let Ok(sparse) = sparsify_train(&split, 0.7, seed) {
            check(&sparse.train);
            prop_assert!(sparse.train.len() <= split.train.len());
            prop_assert_eq!(&sparse.val, &split.val);
            prop_assert_eq!(&sparse.test, &split.test);
            // Determinism.
            let again = sparsify_train(&split, 0.7, seed).unwrap();
            prop_assert_eq!(&sparse.train, &again.train);
        }
    }

    #[test]
    fn negatives_are_distinct_non_positives(
        records in interactions(),
        seed in 0u64..500,
    ) {
        let mut builder = GraphBuilder::new();
        for (u, i) in &records {
            builder.add(&format!("u{u}"), &format!("i{i}"));
        }
        let g = builder.finish().unwrap();
        let user = 0u32;
        let available = g.item_count() - g.user_items(user).len();
        let want = available.min(3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let negs = sample_negatives(&g, user, want, &BTreeSet::new(), &mut rng).unwrap();
        prop_assert_eq!(negs.len(), want);
        let unique: BTreeSet<u32> = negs.iter().copied().collect();
        prop_assert_eq!(unique.len(), want);
        for &n in &negs {
            prop_assert!(!g.has_edge(user, n));
        }
    }

    #[test]
    fn walks_stay_bipartite_and_deterministic(
        records in interactions(),
        seed in 0u64..200,
    ) {
        let mut builder = GraphBuilder::new();
        for (u, i) in &records {
            builder.add(&format!("u{u}"), &format!("i{i}"));
        }
        let g = builder.finish().unwrap();
        let cfg = RwrConfig::default();
        let a = rwr_sample(&g, Node::User(0), &cfg, seed);
        let b = rwr_sample(&g, Node::User(0), &cfg, seed);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.contains(&Node::User(0)));
        prop_assert!(a.len() <= 2 * cfg.max_nodes_per_side);
    }
}
