//! Deterministic stream derivation.
//!
//! Every random quantity in an experiment comes from a ChaCha stream keyed by
//! a hash of `(root seed, labels…)`. Users within a trial get their own
//! stream id on the same key, so results do not depend on evaluation order
//! or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a sequence of labels into a 64-bit key.
pub fn derive_seed(root: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix(root), |acc, &l| splitmix(acc ^ splitmix(l.wrapping_add(GOLDEN))))
}

/// Hashes a text label (mechanism names and the like) for use in `derive_seed`.
pub fn label(s: &str) -> u64 {
    // FNV-1a
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// A fresh stream for `(root, labels…)`.
pub fn stream(root: u64, labels: &[u64]) -> StreamRng {
    let key = derive_seed(root, labels);
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stream `index` under the key of `(root, labels…)`; used for per-user
/// randomness inside a trial.
pub fn substream(root: u64, labels: &[u64], index: u64) -> StreamRng {
    let mut rng = stream(root, labels);
    rng.set_stream(index);
    rng
}
