//! Stable stream splitting.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by
//! `(root seed, purpose, index)`. Changing how many samples an estimator uses
//! can therefore never perturb the trajectory, and chunked estimators give the
//! same answer whatever the thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Centers = 1,
    Uniforms = 2,
    Exponentials = 3,
    Estimator = 4,
    Probes = 5,
    Chunk = 6,
}

pub fn substream(root: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&root.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"slfv\x00\x00\x00\x01");
    ChaCha8Rng::from_seed(key)
}
