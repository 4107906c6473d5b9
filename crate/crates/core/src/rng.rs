//! Named, seeded random streams. Every random choice in a run draws from a
//! stream derived from the run seed plus a label (and optionally an agent id
//! and step), so runs replay exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a; stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn derive_seed(base: u64, label: &str, a: u64, b: u64) -> u64 {
    let mut s = splitmix64(base ^ fnv1a(label.as_bytes()));
    s = splitmix64(s ^ a);
    splitmix64(s ^ b.rotate_left(32))
}

/// A long-lived stream such as `"budgets"` or `"entry"`.
pub fn stream(base: u64, label: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, label, 0, 0))
}

/// A one-shot stream keyed by agent and step, e.g. for a policy decision.
pub fn keyed(base: u64, label: &str, agent: u64, step: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, label, agent.wrapping_add(1), step.wrapping_add(1)))
}
