//! Seed policy. One user seed feeds every random consumer; each consumer
//! XORs in its own fixed tag so streams never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_ENDMEMBERS: u64 = 0x454e_444d_454d_4252; // "ENDMEMBR"
pub const TAG_ABUNDANCES: u64 = 0x4142_554e_4441_4e43; // "ABUNDANC"
pub const TAG_NOISE: u64 = 0x4e4f_4953_455f_5f5f; // "NOISE___"
pub const TAG_VCA: u64 = 0x5643_415f_5f5f_5f5f; // "VCA_____"
pub const TAG_TRAIN: u64 = 0x5452_4149_4e5f_5f5f; // "TRAIN___"
pub const TAG_SPLIT: u64 = 0x5350_4c49_545f_5f5f; // "SPLIT___"

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag
}

pub fn module_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}
