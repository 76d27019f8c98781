//! Seeded random streams.
//!
//! Every stream is a xoshiro256** generator (256 bits of state). A stream
//! created from a 64-bit seed expands it with SplitMix64, which is the
//! seeding recipe of `rand_xoshiro`. Child streams are derived from the
//! parent *seed* and a text label, never from the parent's current state,
//! so the order in which children are created does not matter.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{ArlError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
    state: Xoshiro256StarStar,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream seeded with `derive_seed(self.seed(), label)`.
    pub fn split(&self, label: &str) -> RngState {
        RngState::new(derive_seed(self.seed, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        self.state.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.state.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`, drawn through `u64` so the stream does
    /// not depend on the platform's pointer width.
    pub fn below(&mut self, n: usize) -> usize {
        self.state.random_range(0..n as u64) as usize
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

/// FNV-1a over the seed bytes and the label, finished with the SplitMix64
/// mixer.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for byte in seed.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// I.i.d. uniform entries in `[lo, hi)`.
pub fn rng_uniform(rng: &mut RngState, rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Matrix> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(ArlError::Config(format!("uniform range requires lo < hi, got [{lo}, {hi})")));
    }
    let data = (0..rows * cols)
        .map(|_| {
            let v = lo + (hi - lo) * rng.next_f64();
            if v < hi {
                v
            } else {
                hi.next_down()
            }
        })
        .collect();
    Matrix::new(rows, cols, data)
}

/// Inverted-dropout mask: 0 with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask(rng: &mut RngState, rows: usize, cols: usize, rate: f64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ArlError::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(Matrix::filled(rows, cols, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data)
}
