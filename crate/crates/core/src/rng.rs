//! Counter-based random streams keyed by `(master_seed, trial, purpose)`.
//!
//! Every draw in an experiment comes from its own ChaCha stream, so results
//! do not depend on the order or thread in which trials are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Graph = 0,
    Sampling = 1,
    Signal = 2,
    Noise = 3,
}

/// Trial index reserved for experiment-wide draws (shared graph, shared sampling set).
pub const EXPERIMENT_WIDE: u64 = (1 << 60) - 1;

pub type StreamRng = ChaCha8Rng;

/// Independent stream for `(master_seed, trial, purpose)`.
pub fn stream(master_seed: u64, trial: u64, purpose: Purpose) -> StreamRng {
    assert!(trial <= EXPERIMENT_WIDE, "trial index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((trial << 4) | purpose as u64);
    rng
}

/// Stream used by free-standing helpers that only take a single seed.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
