//! Reproducible randomness. Every Monte Carlo routine is keyed by an
//! `RngState` (seed, stream); parallel workers use one stream per path so
//! worker count never affects results.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngState { seed, stream }
    }

    /// The same (seed, stream) always yields the identical generator.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Sub-stream for worker `index`; used to parallelize across paths.
    pub fn substream(&self, index: u64) -> RngState {
        RngState { seed: self.seed, stream: self.stream.wrapping_add(index).wrapping_add(1) }
    }
}

/// Uniform f64 in [0,1) from the top 53 bits.
pub fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
