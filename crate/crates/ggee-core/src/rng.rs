//! Reproducible stream-splittable RNG derivation.
//!
//! Every randomized routine takes a master seed plus a tag path (replication,
//! subject, purpose, ...) and derives an independent ChaCha stream from it,
//! so parallel schedules and re-runs produce identical draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 256-bit seed from a master seed and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> [u8; 32] {
    let mut h = mix(master ^ 0x6A09_E667_F3BC_C909);
    for (i, &t) in tags.iter().enumerate() {
        h = mix(h ^ mix(t ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    }
    let mut seed = [0u8; 32];
    for (j, chunk) in seed.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&mix(h ^ (j as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)).to_le_bytes());
    }
    seed
}

/// Independent RNG stream keyed by `(master, tags...)`.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, tags))
}
