//! Seed derivation. Every random stream in a run is a pure function of the
//! master seed and a fixed tag path, so worker scheduling cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_PARTITION: u64 = 0x5041_5254;
pub const TAG_INIT: u64 = 0x494e_4954;
pub const TAG_CLIENT: u64 = 0x434c_4e54;
pub const TAG_KMEANS: u64 = 0x4b4d_4e53;
pub const TAG_SUBSAMPLE: u64 = 0x5355_4253;
pub const TAG_SYNTH: u64 = 0x5359_4e54;
pub const TAG_TRANSFORM: u64 = 0x5846_524d;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `master`, order-sensitive.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for client `client_id` in global round `round`.
pub fn client_round(master: u64, client_id: usize, round: usize) -> u64 {
    derive(master, &[TAG_CLIENT, client_id as u64, round as u64])
}
