//! Deterministic random number generation.
//!
//! All randomness (weight initialisation, shuffling, splits) comes from
//! [`ChaCha8Rng`], the ChaCha stream cipher with 8 rounds, seeded through
//! `SeedableRng::seed_from_u64`. Its output stream is stable across platforms
//! and crate versions, which keeps checkpoints bit-reproducible.

pub use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a named purpose.
pub fn derived(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` samples uniform in `[-bound, bound)`.
pub fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// `n` standard normal samples (Box-Muller).
pub fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}
