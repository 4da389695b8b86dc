//! Seeded, splittable random streams.
//!
//! Every run owns one root seed. Consumers ask for a child stream by
//! `(role, index)`; the child is a ChaCha8 generator keyed by the root seed
//! with its stream word set to the packed id, so streams for different roles
//! or indices never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a child stream is used for. Packed into the top bits of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamRole {
    /// Outer-loop trajectories fed to the policy-gradient estimator.
    Actor = 1,
    /// Inner-loop TD(0) sampling for the critic.
    Critic = 2,
    /// Isotropic noise added to parameter updates.
    Injection = 3,
    /// Free-standing Monte-Carlo work (tests, diagnostics, sweeps).
    Sampling = 4,
}

const ROLE_SHIFT: u32 = 56;

/// Pack a role and an index into a stream id.
pub fn stream_id(role: StreamRole, index: u64) -> u64 {
    debug_assert!(index < (1u64 << ROLE_SHIFT));
    ((role as u64) << ROLE_SHIFT) | index
}

/// Recover the role from a packed stream id.
pub fn stream_role(id: u64) -> Option<StreamRole> {
    match id >> ROLE_SHIFT {
        1 => Some(StreamRole::Actor),
        2 => Some(StreamRole::Critic),
        3 => Some(StreamRole::Injection),
        4 => Some(StreamRole::Sampling),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, role: StreamRole, index: u64) -> ChaCha8Rng {
        self.child_by_id(stream_id(role, index))
    }

    pub fn child_by_id(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

/// Inverse-CDF draw from a discrete law using one uniform in `[0, 1)`.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// cumulative sum short of `u`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
