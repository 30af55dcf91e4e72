//! Counter-based seeding.
//!
//! A single master seed fans out into independent ChaCha streams. The
//! replicate index selects the key, the particle (or step) index selects the
//! stream, so changing the particle count or the number of replicates never
//! shifts the random numbers seen by another particle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep initialization draws, resampling draws and Monte-Carlo
/// estimator draws apart even when their indices collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Resample = 2,
    Estimator = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a replicate index into a new 64-bit seed.
pub fn derive_seed(master: u64, replicate: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(replicate.wrapping_add(0xA5A5_A5A5)))
}

/// RNG for one `(replicate, purpose, index)` counter.
pub fn stream(master: u64, replicate: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let key = derive_seed(derive_seed(master, replicate), purpose as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
