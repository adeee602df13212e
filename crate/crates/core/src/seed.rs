//! Counter-based seed derivation.
//!
//! Every random stream is identified by `(master seed, component, index)`,
//! where `component` names the consumer (see the constants below) and `index`
//! is a sample or trajectory number. The three words are folded through the
//! SplitMix64 finalizer and the result seeds a ChaCha8 generator. Streams do
//! not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FINITE_EXPLOITABILITY: u64 = 1;
pub const FINITE_COOP: u64 = 2;
pub const QUEUE_TRAJECTORY: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, component: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ component) ^ index)
}

pub fn stream(master: u64, component: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, component, index))
}
