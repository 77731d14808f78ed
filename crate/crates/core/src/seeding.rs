//! Named random streams split from one master seed.
//!
//! Every stream is ChaCha8 keyed by the master seed; the stream id is derived
//! from the stream name and an index, so adding a worker never shifts the
//! numbers another stream produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const WORLD_GEN: &str = "world-gen";
pub const POLICY_INIT: &str = "policy-init";
pub const ROLLOUT_WORKER: &str = "rollout-worker";
pub const MINIBATCH: &str = "minibatch";
pub const CMI: &str = "cmi";
pub const DEMO_GEN: &str = "demo-gen";
pub const BC_SHUFFLE: &str = "bc-shuffle";

fn name_id(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn stream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(name_id(name).wrapping_add(index));
    rng
}
