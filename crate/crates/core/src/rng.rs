//! Seeded random streams.
//!
//! Every consumer of randomness asks for a stream by purpose label. The stream
//! for `(seed, label)` is ChaCha8 keyed with
//! `SHA-256("omnilayout" ‖ seed as u64 LE ‖ label bytes)`, so streams for
//! different purposes never overlap and adding a new purpose leaves existing
//! ones untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"omnilayout");
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, "data").random();
        let b: u64 = stream(7, "data").random();
        let c: u64 = stream(7, "init").random();
        let d: u64 = stream(8, "data").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
