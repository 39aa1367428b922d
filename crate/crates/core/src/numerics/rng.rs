//! Deterministic, path-addressed random streams.
//!
//! A stream is identified by a root seed and a path of sub-indices. Every
//! distinct `(seed, path)` pair maps to its own ChaCha8 key, so children can
//! be derived in any order and handed to parallel workers without changing
//! any draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::linalg::C64;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    path: Vec<u32>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    /// Child stream at `self.path ++ path`.
    pub fn derive(&self, path: &[u32]) -> RngStream {
        let mut p = self.path.clone();
        p.extend_from_slice(path);
        RngStream {
            seed: self.seed,
            path: p,
        }
    }

    /// Single-index shorthand for [`RngStream::derive`].
    pub fn child(&self, idx: u32) -> RngStream {
        self.derive(&[idx])
    }

    /// Fresh sampler positioned at the start of this stream.
    pub fn sampler(&self) -> Sampler {
        Sampler {
            rng: ChaCha8Rng::from_seed(self.key()),
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut state = splitmix(self.seed ^ 0x6a09_e667_f3bc_c908);
        // Length is folded in so [] and [0] differ.
        state = splitmix(state ^ (self.path.len() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for &p in &self.path {
            state = splitmix(state ^ u64::from(p).wrapping_add(0xbb67_ae85_84ca_a73b));
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        key
    }
}

/// Free function form of [`RngStream::derive`].
pub fn derive_substream(root: &RngStream, path: &[u32]) -> RngStream {
    root.derive(path)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw source for one stream.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly symmetric `CN(0, 1)`: each component has variance 1/2.
    pub fn cnormal(&mut self) -> C64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        C64::new(s * self.normal(), s * self.normal())
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn raw_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }
}
