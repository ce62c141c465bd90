//! Named, reproducible random streams derived from a single master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from `(master, label, indices)`.
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(master);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &i in indices {
        h = splitmix(h ^ splitmix(i.wrapping_add(0xA5A5_A5A5)));
    }
    h
}

pub fn stream(master: u64, label: &str, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, indices))
}
