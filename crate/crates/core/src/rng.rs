//! Reproducible random streams.
//!
//! Every simulation in the crate draws from ChaCha8, a counter-based
//! generator. A run is identified by a `(seed, stream)` pair: the seed picks
//! the key and the stream id picks one of 2^64 independent keystreams, so
//! replication `i` of a Monte Carlo experiment always sees the same numbers
//! regardless of how replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for replication `stream` of the experiment keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
