//! Counter-based random streams keyed by `(seed, sample_index)`.
//!
//! Every sample draws from its own ChaCha8 stream: the seed selects the key
//! and the sample index selects the stream id, so samples are independent of
//! each other and of how a batch is scheduled across workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
    seed: u64,
    sample_index: u64,
    draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, sample_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(sample_index);
        RngStream { inner, seed, sample_index, draws: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample_index(&self) -> u64 {
        self.sample_index
    }

    /// Number of 32/64-bit words drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.draws += dst.len().div_ceil(8) as u64;
        self.inner.fill_bytes(dst)
    }
}
