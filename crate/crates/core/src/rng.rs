//! Seeded, portable random streams.
//!
//! Every random decision in the pipeline draws from a `ChaCha8Rng` keyed by
//! the run seed (`seed_from_u64`) and positioned on a 64-bit ChaCha stream
//! derived from a domain tag and up to two indices:
//!
//! ```text
//! stream = mix(mix(mix(domain) ^ a) ^ b)      mix = SplitMix64 finalizer
//! ```
//!
//! A slot's proposals therefore never depend on how many values another slot
//! consumed, which is what lets parallel and serial runs agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Proposal = 1,
    Accept = 2,
    Scene = 3,
    ScenePerson = 4,
    Fixture = 5,
}

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(domain: Domain, a: u64, b: u64) -> u64 {
    mix(mix(mix(domain as u64) ^ a) ^ b)
}

pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(domain, a, b));
    rng
}
