//! Independent ChaCha streams derived from one user seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const INIT: u64 = 1;
pub(crate) const SHUFFLE: u64 = 2;
pub(crate) const NEGATIVES: u64 = 3;
pub(crate) const SPLIT: u64 = 4;
pub(crate) const SAMPLER: u64 = 5;
pub(crate) const LR_NEGATIVES: u64 = 6;
/// Walk streams are `WALKS | node id`.
pub(crate) const WALKS: u64 = 1 << 32;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
