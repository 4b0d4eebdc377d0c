//! Named, reproducible random streams.
//!
//! All randomness in a run flows from one root seed. Each consumer takes its
//! own stream, derived from the root seed plus a stream label and up to two
//! indices (device, round), so device- and round-level work can run in any
//! order without perturbing the draws of other consumers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies an independent random stream within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Dataset generation.
    Dataset,
    /// Non-IID partition of samples over devices.
    Partition,
    /// Device hardware profiles.
    Profiles,
    /// Model weight initialization.
    Init,
    /// Channel fading per round.
    Channels { round: u64 },
    /// Dropout mask for one device in one round.
    Mask { device: u64, round: u64 },
    /// Probing draws for constants estimation.
    Probe,
    /// Monte Carlo trial (analysis experiments).
    Trial { index: u64 },
}

impl Stream {
    fn label(self) -> (u64, u64, u64) {
        match self {
            Stream::Dataset => (1, 0, 0),
            Stream::Partition => (2, 0, 0),
            Stream::Profiles => (3, 0, 0),
            Stream::Init => (4, 0, 0),
            Stream::Channels { round } => (5, round, 0),
            Stream::Mask { device, round } => (6, device, round),
            Stream::Probe => (7, 0, 0),
            Stream::Trial { index } => (8, index, 0),
        }
    }
}

/// SplitMix64 finalizer; a fixed bijective mixer with good avalanche.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the stream for `stream` under `root_seed`.
///
/// Deterministic across platforms: the same (seed, stream) pair always
/// yields the same draw sequence.
pub fn stream_rng(root_seed: u64, stream: Stream) -> ChaCha8Rng {
    let (tag, a, b) = stream.label();
    let mut seed = [0u8; 32];
    let words = [
        mix(root_seed),
        mix(root_seed ^ mix(tag)),
        mix(a ^ mix(tag.wrapping_mul(0x51ed_270b)).wrapping_add(b)),
        mix(b ^ root_seed.rotate_left(17) ^ tag),
    ];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
