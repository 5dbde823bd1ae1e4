//! Seeded random streams. Every random draw in the crate goes through here so
//! that results depend only on `(seed, stream index)` and never on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` under `seed`.
pub fn derived(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A plain seed for stream `index`, for APIs that take a `u64` seed.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    derived(seed, index).next_u64()
}
