use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream for `(seed, stream)`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream ids keep unrelated consumers of one seed apart.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SPLIT: u64 = 2;
pub(crate) const STREAM_MEANS: u64 = 3;
pub(crate) const STREAM_SAMPLES: u64 = 4;
pub(crate) const STREAM_ROTATION: u64 = 5;
pub(crate) const STREAM_VIEW_NOISE: u64 = 6;
pub(crate) const STREAM_GRADCHECK: u64 = 7;
/// Epoch-dependent streams are `base + epoch`.
pub(crate) const STREAM_BATCHES_BASE: u64 = 1 << 32;
pub(crate) const STREAM_ACTIONS_BASE: u64 = 2 << 32;
