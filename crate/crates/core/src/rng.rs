//! Deterministic RNG derivation.
//!
//! Every random decision in the crate draws from a [`ChaCha8Rng`] derived
//! from a base seed, a domain tag, and an index. Derivation is stateless, so
//! any stage of a run (frame 4711, training step 203, eval pass 2) can be
//! reproduced in isolation without replaying the stream that preceded it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Namespaces for derived RNG streams. Keeping them disjoint means adding a
/// consumer never shifts the randomness seen by existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Figure pose sampling (per frame index).
    Pose,
    /// Frame appearance (palette jitter, background tone).
    Appearance,
    /// Which frames of a generated corpus receive blur / corruption.
    DegradePick,
    /// Per-step timestep and noise draws in training.
    TrainStep,
    /// Network parameter initialization (per layer).
    Init,
    /// Train/eval split shuffling.
    Split,
    /// Initial noise for sampling.
    Sampler,
    /// Random probes in verification harnesses.
    Probe,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Pose => 0x706f_7365,
            Domain::Appearance => 0x6170_7065,
            Domain::DegradePick => 0x6465_6772,
            Domain::TrainStep => 0x7374_6570,
            Domain::Init => 0x696e_6974,
            Domain::Split => 0x7370_6c69,
            Domain::Sampler => 0x7361_6d70,
            Domain::Probe => 0x7072_6f62,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive an independent RNG stream for `(seed, domain, index)`.
pub fn rng_for(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = splitmix64(seed ^ domain.tag());
    let b = splitmix64(a ^ index);
    let c = splitmix64(b);
    let d = splitmix64(c);
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Hash a string into an index for [`rng_for`], used for per-layer init.
pub fn name_index(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
