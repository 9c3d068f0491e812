//! Seeded random streams.
//!
//! Every consumer (initialization, dropout, query generation, shuffling)
//! draws from its own ChaCha stream derived from one master seed, so adding
//! draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Named sub-streams of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    Shuffle,
    QueryNodes,
    QueryAttrs,
}

impl Stream {
    fn label(self) -> &'static str {
        match self {
            Stream::Init => "init",
            Stream::Dropout => "dropout",
            Stream::Shuffle => "shuffle",
            Stream::QueryNodes => "query-nodes",
            Stream::QueryAttrs => "query-attrs",
        }
    }
}

/// Deterministic generator for `seed`.
pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, stream, index)`.
pub fn sub_stream(seed: u64, stream: Stream, index: u64) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.label().as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Uniform integer in `[0, bound)` independent of pointer width.
pub fn below(rng: &mut Rng, bound: usize) -> usize {
    use rand::Rng as _;
    assert!(bound > 0);
    rng.gen_range(0..bound as u64) as usize
}

/// Uniform float in `[0, 1)`.
pub fn unit(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    rng.gen::<f64>()
}

/// Fisher–Yates shuffle using [`below`].
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// `k` distinct indices from `[0, n)`, uniformly, in draw order.
pub fn sample_indices(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + below(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
