//! Seeded random streams.
//!
//! Every stochastic operation draws from a [`ChaCha8Rng`] derived from a root
//! seed and a stream label, so independent consumers never share state and a
//! run is reproducible bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a family of independent random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child tree for a labelled sub-component.
    pub fn child(&self, label: &str) -> SeedTree {
        let mut h = splitmix64(self.seed);
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        SeedTree { seed: h }
    }

    /// Child tree for an indexed sub-component (task, epoch, ...).
    pub fn index(&self, i: u64) -> SeedTree {
        SeedTree {
            seed: splitmix64(splitmix64(self.seed) ^ i.wrapping_mul(0xA24B_AED4_963E_E407)),
        }
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn stream(&self, label: &str) -> StreamRng {
        self.child(label).rng()
    }
}

pub fn gaussian_vec(rng: &mut StreamRng, len: usize, sigma: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}
