use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::Scenario;

/// FNV-1a; stable across platforms and compiler versions.
fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Generator for sample `index` of a run; independent of evaluation order.
pub fn rng(seed: u64, scenario: Scenario, index: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(scenario.name()).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}
