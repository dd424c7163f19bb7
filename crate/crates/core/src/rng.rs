//! Seeded randomness.
//!
//! Every random draw in the crate goes through an [`RngHandle`], a
//! `(seed, stream_id)` pair backed by ChaCha8. ChaCha exposes 2⁶⁴ independent
//! streams per key, so per-replication and per-task streams never overlap.
//! Only reproducibility within this implementation is promised; the exact
//! sample values are not a stable interface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Independent purposes that draw from the same `(replication, task)` stream
/// coordinates. Mixed into the key so that, for example, the fold split of a
/// task never reuses the noise draws that generated it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data,
    ClusterAssignment,
    Split,
    Learner,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 0x6461_7461,
            Purpose::ClusterAssignment => 0x636c_7573,
            Purpose::Split => 0x7370_6c69,
            Purpose::Learner => 0x6c65_6172,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream_id: u64,
}

/// Stream id for task `task` of Monte Carlo replication `replication`.
///
/// Tasks occupy the low 20 bits, so up to ~10⁶ tasks per replication get
/// distinct streams.
pub fn stream_id(replication: u64, task: u64) -> u64 {
    debug_assert!(task < (1 << 20));
    (replication << 20) | task
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngHandle {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn for_task(seed: u64, replication: u64, task: u64, purpose: Purpose) -> Self {
        Self::new(seed, stream_id(replication, task)).derive(purpose)
    }

    /// Same stream coordinates under a different key.
    pub fn derive(self, purpose: Purpose) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(purpose.tag())),
            stream_id: self.stream_id,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// `count` i.i.d. N(0, 1) draws from the start of this stream.
    pub fn standard_normal(&self, count: usize) -> Vec<f64> {
        standard_normal(&mut self.generator(), count)
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}
