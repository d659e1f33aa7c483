//! Deterministic randomness.
//!
//! Two primitives cover every random draw in the crate:
//!
//! * [`splitmix64_at`] is a counter-based generator: the value at a given
//!   `(seed, counter)` pair is a pure function of both, so projection
//!   matrices can be regenerated on demand from their seed.
//! * [`substream`] derives a named ChaCha8 stream from a base seed, so
//!   independent consumers (object latents, prototypes, noise, shuffles)
//!   never share draws and adding a consumer does not perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Output number `counter` of the SplitMix64 sequence started at `seed`.
#[inline]
pub fn splitmix64_at(seed: u64, counter: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(counter.wrapping_add(1))))
}

/// 64-bit FNV-1a, used to turn stream names into stream ids.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A ChaCha8 generator for the stream `name` under `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Standard normal draw (Box-Muller), kept local so the stream layout does
/// not depend on an external distribution implementation.
pub fn gaussian<R: rand::Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
