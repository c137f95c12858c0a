//! Labeled random streams derived from a single root seed.
//!
//! Every subsystem draws from its own stream so that, for example, adding an
//! adversary never shifts the channel-noise draws of a scenario.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha12Rng;

/// Derive the stream for `label` from `root`.
pub fn stream(root: u64, label: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(b"iolwsim-stream");
    hasher.update(root.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha12Rng::from_seed(digest)
}

/// Derive a child seed, used where a worker needs its own root.
pub fn child_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"iolwsim-child");
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
