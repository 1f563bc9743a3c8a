//! Gray-mapped square QAM constellations with unit average power.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Qpsk,
    #[serde(alias = "16qam")]
    Qam16,
    #[serde(alias = "64qam")]
    Qam64,
    #[serde(alias = "256qam")]
    Qam256,
}

fn gray(b: usize) -> usize {
    b ^ (b >> 1)
}

fn gray_inverse(mut g: usize) -> usize {
    let mut b = 0;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

impl Constellation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Constellation::Qpsk => 2,
            Constellation::Qam16 => 4,
            Constellation::Qam64 => 6,
            Constellation::Qam256 => 8,
        }
    }

    pub fn order(self) -> usize {
        1 << self.bits_per_symbol()
    }

    fn levels(self) -> usize {
        1 << (self.bits_per_symbol() / 2)
    }

    fn norm(self) -> f64 {
        (2.0 * (self.order() as f64 - 1.0) / 3.0).sqrt()
    }

    /// Point for symbol `index` (its Gray-coded bit label).
    pub fn map(self, index: usize) -> Complex64 {
        let half = self.bits_per_symbol() / 2;
        let l = self.levels();
        let ii = gray_inverse(index >> half);
        let qi = gray_inverse(index & (l - 1));
        let amp = |lvl: usize| (2.0 * lvl as f64 - (l as f64 - 1.0)) / self.norm();
        Complex64::new(amp(ii), amp(qi))
    }

    /// Nearest constellation point index.
    pub fn slice(self, z: Complex64) -> usize {
        let half = self.bits_per_symbol() / 2;
        let l = self.levels();
        let level = |x: f64| {
            let v = ((x * self.norm() + (l as f64 - 1.0)) / 2.0).round();
            v.clamp(0.0, (l - 1) as f64) as usize
        };
        (gray(level(z.re)) << half) | gray(level(z.im))
    }

    pub fn points(self) -> Vec<Complex64> {
        (0..self.order()).map(|i| self.map(i)).collect()
    }

    pub fn random_indices<R: Rng>(self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.order())).collect()
    }
}
