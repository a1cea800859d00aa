//! Counter-based random streams.
//!
//! Every random draw in the library comes from a ChaCha8 stream addressed by
//! `(seed, domain, index)`: the seed and domain select the key, the index
//! selects the ChaCha stream nonce. Draws for OD `z` or segment `i` therefore
//! never depend on how many draws were made for other entities, or in which
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct domains never share keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    OdDemand = 1,
    RouteSplit = 2,
    SpeedNoise = 3,
    GtDemand = 4,
    ParamBias = 5,
    InitialPoint = 6,
    Search = 7,
    Perturbation = 8,
    Generator = 9,
    RunSeed = 10,
    EvalSeed = 11,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// 64-bit FNV-1a of a string, used to fold names into seeds.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// The stream for entity `index` in `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut w = derive_seed(&[seed, domain as u64]);
    for chunk in key.chunks_mut(8) {
        w = mix64(w);
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
