//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream keyed by the user seed
//! and a tuple of integers (pixel index, channel, resample, ...). Streams do
//! not depend on evaluation order, so parallel and serial runs agree bit for
//! bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Stream channels. Values are part of the output contract: changing one
/// changes every simulated dataset.
pub mod channel {
    pub const SINGLES_D1: u64 = 1;
    pub const SINGLES_D2: u64 = 2;
    /// Coincidences of order `m` use `COINCIDENCE_BASE + m`.
    pub const COINCIDENCE_BASE: u64 = 16;
    pub const G2_EMITTER: u64 = 64;
    pub const G2_BACKGROUND: u64 = 65;
    pub const BOOTSTRAP: u64 = 96;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, key...)`.
pub fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &k in key {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    let mut bytes = [0u8; 32];
    let mut state = h;
    for chunk in bytes.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// One Poisson draw; nonpositive means give 0.
pub fn poisson<R: rand::Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => mean.round() as u64,
    }
}
