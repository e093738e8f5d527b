//! Order-stable random substreams.
//!
//! Every random draw in a fit is taken from a ChaCha8 stream whose key is
//! derived from `(master seed, phase, major, minor)`. A stream depends only
//! on its key, never on which thread consumed it or in which order, so
//! per-user work can run in parallel without changing any output bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which part of a computation a substream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Proposal = 1,
    Coefficients = 2,
    Covariance = 3,
    Shuffle = 4,
    Langevin = 5,
    Generate = 6,
    Suppress = 7,
    Init = 8,
}

pub fn substream(seed: u64, phase: Phase, major: u64, minor: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(phase as u64).to_le_bytes());
    key[16..24].copy_from_slice(&major.to_le_bytes());
    key[24..32].copy_from_slice(&minor.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
