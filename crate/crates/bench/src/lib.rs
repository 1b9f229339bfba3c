//! Shared fixtures for the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn bench_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xBE7C)
}

pub fn bench_key(i: u64) -> Vec<u8> {
    format!("{i:016}").into_bytes()
}

pub fn bench_value(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i % 251) as u8).collect()
}
