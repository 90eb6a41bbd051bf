use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator handed to anything that draws random numbers.
pub type Rng = ChaCha8Rng;

/// Seed for a family of independent ChaCha8 streams.
///
/// ChaCha is counter based: stream `k` of seed `s` is a pure function of
/// `(s, k)`, so workers can each take their own stream and the draws do not
/// depend on scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
}

impl RngState {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Generator for stream `stream` of this seed.
    pub fn stream(&self, stream: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Derives an unrelated seed, e.g. one per epoch or per subsystem.
    pub fn split(&self, key: u64) -> RngState {
        use rand::RngCore;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(key);
        RngState {
            seed: rng.next_u64(),
        }
    }
}
