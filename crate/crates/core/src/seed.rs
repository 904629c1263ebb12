//! Per-purpose RNG streams derived from a single run seed, so any stream can
//! be regenerated independently (parallel synthesis, resumed runs).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Each purpose gets its own tag so streams never collide.
pub mod purpose {
    pub const MASK: u64 = 0x6d61_736b;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const SPLIT: u64 = 0x7370_6c74;
    pub const INIT: u64 = 0x696e_6974;
    pub const TEXTURE: u64 = 0x7465_7874;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a base seed together with any number of stream coordinates.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |h, &p| splitmix(h ^ splitmix(p)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of the mask synthesized for `image` during `epoch`.
pub fn mask_seed(run_seed: u64, image: usize, epoch: u64) -> u64 {
    derive(run_seed, &[purpose::MASK, image as u64, epoch])
}
