//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `&mut Rng`. Independent
//! components get their own stream, derived from a root seed and a list of
//! labels so that adding a consumer never perturbs another one.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed and a path of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(seed: u64, labels: &[u64]) -> Rng {
    seeded(derive_seed(seed, labels))
}

/// Stable 64-bit label for a string (FNV-1a).
pub fn label(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform draw from the open interval (0, 1).
pub fn open01(rng: &mut Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard Gumbel noise, `-ln(-ln u)`.
pub fn gumbel(rng: &mut Rng) -> f64 {
    -(-open01(rng).ln()).ln()
}

/// Standard logistic noise, `ln(u / (1 - u))`.
pub fn logistic(rng: &mut Rng) -> f64 {
    let u = open01(rng);
    (u / (1.0 - u)).ln()
}
