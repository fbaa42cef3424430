//! Named random sub-streams derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::synth::splitmix64;

/// FNV-1a over the name, mixed with the seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_give_distinct_streams() {
        assert_ne!(derive_seed(1, "init"), derive_seed(1, "sampling"));
        assert_ne!(derive_seed(1, "init"), derive_seed(2, "init"));
        assert_eq!(derive_seed(7, "init"), derive_seed(7, "init"));
    }
}
