//! Deterministic seed fan-out: one global seed feeds every stage through a hash of the stage label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate_streams() {
        assert_eq!(derive_seed(7, "fusion"), derive_seed(7, "fusion"));
        assert_ne!(derive_seed(7, "fusion"), derive_seed(7, "depth"));
        assert_ne!(derive_seed(7, "fusion"), derive_seed(8, "fusion"));
    }
}
