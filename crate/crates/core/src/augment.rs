//! Block-sampling augmentation: the sequence is cut into consecutive blocks
//! of `block_len` steps (the last one possibly shorter) and each view keeps
//! one uniformly drawn row per block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub block_len: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            block_len: 3,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 {
            return Err(Error::Config("block_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: FeatureSequence,
    pub view_b: FeatureSequence,
    pub indices_a: Vec<usize>,
    pub indices_b: Vec<usize>,
}

/// Number of blocks, `ceil(t / block_len)`.
pub fn num_blocks(t: usize, block_len: usize) -> usize {
    t.div_ceil(block_len)
}

fn block_range(i: usize, t: usize, block_len: usize) -> std::ops::Range<usize> {
    i * block_len..((i + 1) * block_len).min(t)
}

pub fn sample_indices<R: Rng + ?Sized>(t: usize, block_len: usize, rng: &mut R) -> Vec<usize> {
    (0..num_blocks(t, block_len))
        .map(|i| rng.random_range(block_range(i, t, block_len)))
        .collect()
}

/// Draws two independent views. All of view A's indices are drawn before
/// view B's, so the stream consumption is fixed for a given `T`.
pub fn make_views<R: Rng + ?Sized>(
    seq: &FeatureSequence,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> ViewPair {
    let l = cfg.block_len.max(1);
    let indices_a = sample_indices(seq.len(), l, rng);
    let indices_b = sample_indices(seq.len(), l, rng);
    ViewPair {
        view_a: seq.select_rows(&indices_a),
        view_b: seq.select_rows(&indices_b),
        indices_a,
        indices_b,
    }
}

/// Deterministic counterpart of [`make_views`]: the first row of every block.
pub fn identity_view(seq: &FeatureSequence, cfg: &AugmentConfig) -> FeatureSequence {
    let l = cfg.block_len.max(1);
    let idx: Vec<usize> = (0..num_blocks(seq.len(), l)).map(|i| i * l).collect();
    seq.select_rows(&idx)
}
