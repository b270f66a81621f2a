//! Deterministic seed derivation so every component can be rerun in
//! isolation: child seed = first 8 LE bytes of SHA-256(master || tag).

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
