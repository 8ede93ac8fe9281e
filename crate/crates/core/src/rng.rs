//! Seeded random streams.
//!
//! Every consumer derives its own stream from the run's root seed and a
//! name (`"data"`, `"init"`, `"shuffle"`, ...), so adding a draw in one
//! component never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn substream(root_seed: u64, name: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}
