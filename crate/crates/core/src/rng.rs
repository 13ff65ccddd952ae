//! Counter-based seed splitting.
//!
//! Every random draw in a sweep is keyed by `(master, topology, trial, phase)`.
//! The four words form the 256-bit ChaCha seed directly, so distinct keys give
//! distinct, independent streams and the result of a trial never depends on
//! which worker runs it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::C64;

pub type SimRng = ChaCha8Rng;

/// Marks a key that is not tied to a particular trial.
pub const NO_TRIAL: u64 = u64::MAX;

/// Stream identifiers within one trial.
pub mod phase {
    pub const TOPOLOGY: u64 = 1;
    pub const CHANNELS: u64 = 2;
    pub const BITS: u64 = 3;
    /// Receiver noise at BS `v` uses `NOISE_BASE + v` (0 = MBS).
    pub const NOISE_BASE: u64 = 1 << 16;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master: u64,
    pub topology: u64,
    pub trial: u64,
    pub phase: u64,
}

impl StreamKey {
    pub fn new(master: u64, topology: u64, trial: u64, phase: u64) -> Self {
        Self {
            master,
            topology,
            trial,
            phase,
        }
    }

    /// Key for quantities that are fixed per topology.
    pub fn topology(master: u64, topology: u64) -> Self {
        Self::new(master, topology, NO_TRIAL, phase::TOPOLOGY)
    }

    pub fn with_phase(self, phase: u64) -> Self {
        Self { phase, ..self }
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut seed = [0u8; 32];
        for (chunk, word) in seed
            .chunks_exact_mut(8)
            .zip([self.master, self.topology, self.trial, self.phase])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        seed
    }

    pub fn rng(&self) -> SimRng {
        SimRng::from_seed(self.seed_bytes())
    }
}

/// RNG for a bare integer seed (single-shot operations outside a sweep).
pub fn rng_from_seed(seed: u64) -> SimRng {
    StreamKey::new(seed, 0, NO_TRIAL, 0).rng()
}

/// Circularly-symmetric complex Gaussian with total variance `var`
/// (each of the real and imaginary parts has variance `var / 2`).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn distinct_keys_give_distinct_streams() {
        let mut firsts = HashSet::new();
        for p in 0..8 {
            for t in 0..8 {
                for ph in [phase::CHANNELS, phase::BITS, phase::NOISE_BASE] {
                    let v: u64 = StreamKey::new(7, p, t, ph).rng().random();
                    firsts.insert(v);
                }
            }
        }
        assert_eq!(firsts.len(), 8 * 8 * 3);
    }

    #[test]
    fn complex_gaussian_variance_split() {
        let mut rng = rng_from_seed(11);
        let n = 200_000;
        let (mut re2, mut im2) = (0.0, 0.0);
        for _ in 0..n {
            let z = complex_gaussian(&mut rng, 2.0);
            re2 += z.re * z.re;
            im2 += z.im * z.im;
        }
        assert!((re2 / n as f64 - 1.0).abs() < 0.02);
        assert!((im2 / n as f64 - 1.0).abs() < 0.02);
    }
}
