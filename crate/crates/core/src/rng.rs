//! Seeded randomness helpers.
//!
//! Everything random in this crate flows through a `ChaCha8Rng` and these
//! helpers, so a fixed seed reproduces runs bit-identically across platforms.

pub use rand_chacha::ChaCha8Rng;
pub use rand_core::{Rng, SeedableRng};

/// Deterministic generator from a 64-bit seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in `[lo, hi)` built from the raw 64-bit stream.
pub fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    // 53 mantissa bits -> exact dyadic in [0, 1)
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    lo + u * (hi - lo)
}

/// Uniform index in `[0, n)`.
pub fn index<R: Rng>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<R: Rng, T>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}
