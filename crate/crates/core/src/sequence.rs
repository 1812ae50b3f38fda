//! Seeded, randomly shifted Halton points for start designs and probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// Halton sequence with a Cranley–Patterson rotation drawn from `seed`.
#[derive(Debug, Clone)]
pub struct ShiftedHalton {
    shift: Vec<f64>,
}

impl ShiftedHalton {
    /// # Panics
    /// If `dim` exceeds the 32 tabulated prime bases.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "halton sequence supports at most 32 dimensions");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            shift: (0..dim).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// The `index`-th point of the unit cube (index 0 is the first point).
    pub fn unit_point(&self, index: u64) -> Vec<f64> {
        self.shift
            .iter()
            .zip(PRIMES)
            .map(|(s, base)| {
                let v = radical_inverse(index + 1, base) + s;
                v - v.floor()
            })
            .collect()
    }

    /// The `index`-th point mapped into the box `[lo, hi]`.
    pub fn box_point(&self, index: u64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
        self.unit_point(index)
            .into_iter()
            .zip(lo.iter().zip(hi))
            .map(|(u, (l, h))| l + u * (h - l))
            .collect()
    }
}
