//! Deterministic random-number streams.
//!
//! Every stochastic task derives its own counter-based stream from
//! `(master_seed, domain, index)`. Parallel workers therefore produce
//! bit-identical results regardless of scheduling or thread count, and a
//! single changed index never perturbs sibling streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream domains. Keeping them disjoint means an emitter stream can never
/// collide with, say, a resampling-shuffle stream under the same seed.
pub mod domain {
    pub const BACKGROUND: u64 = 0;
    pub const EMITTER: u64 = 1;
    pub const SWEEP: u64 = 2;
    pub const PILLAR: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const LIFETIME: u64 = 5;
    pub const MISC: u64 = 6;
}

/// Derive the stream for one task. `index` must stay below 2^48 so that
/// `(domain, index)` packs into the ChaCha stream id without overlap.
pub fn task_rng(master_seed: u64, domain: u64, index: u64) -> ChaCha12Rng {
    assert!(index < (1 << 48), "task index exceeds stream space");
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream((domain << 48) | index);
    rng
}
