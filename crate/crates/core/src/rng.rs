//! Counter-mode seed derivation and per-stream Bernoulli sampling.
//!
//! Every random decision is drawn from a stream keyed by the root seed and a
//! tuple of coordinates (participant, round, phase, draw kind). No stream is
//! ever shared, so the order in which streams are consumed cannot change
//! what they produce.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `root` together with `coords` into a fresh 64-bit seed.
pub fn derive_seed(root: u64, coords: &[u64]) -> u64 {
    let mut h = mix64(root ^ 0x6a09_e667_f3bc_c908);
    for (i, &c) in coords.iter().enumerate() {
        h = mix64(h ^ mix64(c.wrapping_add((i as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D))));
    }
    h
}

pub fn stream_rng(root: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, coords))
}

/// Domain tags keep unrelated streams apart.
pub mod domain {
    pub const PARTICIPANT: u64 = 1;
    pub const ADVERSARY: u64 = 2;
    pub const TRIAL: u64 = 3;
}

/// Hit times of an i.i.d. Bernoulli(p) process over `0..len`, generated by
/// geometric gap sampling. Equivalent in law to one uniform draw per slot,
/// at a cost proportional to the number of hits.
#[derive(Debug, Clone)]
pub struct BernoulliStream {
    rng: ChaCha8Rng,
    gaps: Option<Geometric>,
    next: Option<u64>,
    len: u64,
    p: f64,
}

impl BernoulliStream {
    pub fn new(seed: u64, p: f64, len: u64) -> Self {
        let p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        let gaps = if p > 0.0 { Geometric::new(p).ok() } else { None };
        let mut s = BernoulliStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            gaps,
            next: None,
            len,
            p,
        };
        s.next = s.step_from(0);
        s
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn step_from(&mut self, start: u64) -> Option<u64> {
        let gaps = self.gaps.as_ref()?;
        let gap = gaps.sample(&mut self.rng);
        let slot = start.checked_add(gap)?;
        (slot < self.len).then_some(slot)
    }

    /// Next slot at which the process fires, if any remain.
    pub fn peek(&self) -> Option<u64> {
        self.next
    }

    pub fn fires_at(&self, slot: u64) -> bool {
        self.next == Some(slot)
    }

    /// Moves past `slot`.
    pub fn advance_past(&mut self, slot: u64) {
        while let Some(s) = self.next {
            if s > slot {
                break;
            }
            self.next = self.step_from(s + 1);
        }
    }
}

/// Uniform draw in `[0, 1)`.
pub fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>()
}
