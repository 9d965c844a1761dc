//! Counter-based random streams.
//!
//! A [`RandomStream`] is a ChaCha8 keystream: the master seed selects the key
//! and the stream id selects the 64-bit nonce. Any `(master_seed, stream_id)`
//! pair therefore addresses its own sequence, independent of how tasks are
//! scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct RandomStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(master_seed));
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    /// Stream addressed by a path of task coordinates, e.g. `[tag, seed, lambda_index]`.
    pub fn derive(master_seed: u64, path: &[u64]) -> Self {
        Self::new(master_seed, stream_id(path))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw on the half-open interval `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Folds a coordinate path into a single stream id.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter().fold(0x6A09_E667_F3BC_C909u64, |acc, &p| {
        mix64(acc ^ mix64(p.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    })
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
