//! Localized collaborative filtering on bipartite user-item graphs.
//!
//! The pipeline scores a (user, item) pair from the structure of a small
//! subgraph extracted around the pair instead of learned per-node embeddings,
//! which makes the scorer transferable across graphs with disjoint user/item
//! sets. A hypernetwork conditioned on eight structural graph properties
//! customizes the shared convolution weights per graph; pre-training runs
//! over many graphs and fine-tuning specializes the model to a sparse target.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod manifest;
pub mod mf;
pub mod model;
pub mod props;
pub mod split;
pub mod subgraph;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Mix a salt into a base seed to derive an independent RNG stream.
///
/// SplitMix64 finalizer over the combined words; cheap, stateless, and
/// collision-resistant enough for seed derivation.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
