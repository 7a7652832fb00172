//! Seeded, reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed and a stream id
//! mixed from a tuple of integers (restart index, chunk index, ...). Results
//! that are reduced in a fixed chunk order therefore do not depend on how
//! many worker threads executed the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Number of draws per Monte Carlo chunk. Fixed so that chunk boundaries,
/// and thus the random streams, never depend on the worker count.
pub const CHUNK: usize = 4096;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, ids...)`.
pub fn stream(seed: u64, ids: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ids.iter().fold(0x5851_F42D_4C95_7F2D_u64, |acc, &x| splitmix(acc ^ splitmix(x)));
    rng.set_stream(id);
    rng
}

/// Splits `total` draws into fixed-size chunks `(chunk_id, len)`.
pub fn chunks(total: usize) -> Vec<(u64, usize)> {
    (0..total.div_ceil(CHUNK))
        .map(|c| (c as u64, CHUNK.min(total - c * CHUNK)))
        .collect()
}
