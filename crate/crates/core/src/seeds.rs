//! Counter-based seed splitting: every (domain, index) pair gets its own
//! ChaCha stream under a master seed, so trials and blocks can be drawn in
//! any order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Signal = 1,
    Noise = 2,
    Operator = 3,
    MonteCarlo = 4,
    Block = 5,
}

/// Independent stream for `(domain, index)` under `master`.
pub fn stream(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((domain as u64) << 48) ^ index);
    rng
}

/// Derive a child master seed (e.g. per trial) from a parent seed.
pub fn child_seed(master: u64, domain: Domain, index: u64) -> u64 {
    use rand::RngCore;
    stream(master, domain, index).next_u64()
}
