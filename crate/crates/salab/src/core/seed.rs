use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator every trajectory draws from.
pub type StreamRng = ChaCha8Rng;

/// Identifies one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        SeedSpec { master_seed, stream_index }
    }
}

/// Generator for `(master_seed, stream_index)`.
///
/// The key comes from the master seed and the stream index selects one of
/// ChaCha's 2^64 independent streams, so the state for stream `i` never
/// depends on how many other streams exist or which thread builds them.
pub fn derive_stream(seed: SeedSpec) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.master_seed);
    rng.set_stream(seed.stream_index);
    rng
}
