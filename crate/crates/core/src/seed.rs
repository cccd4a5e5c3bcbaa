//! Per-component seed derivation from one master seed.
//!
//! `derive_seed(master, name)` is the first 8 bytes (little-endian) of
//! SHA-256 over `master.to_le_bytes() || name`. Components seeded this way
//! can be re-run in isolation and still draw the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn component_rng(master: u64, component: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, component))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_component_specific() {
        assert_eq!(derive_seed(7, "train"), derive_seed(7, "train"));
        assert_ne!(derive_seed(7, "train"), derive_seed(7, "eval"));
        assert_ne!(derive_seed(7, "train"), derive_seed(8, "train"));
    }
}
