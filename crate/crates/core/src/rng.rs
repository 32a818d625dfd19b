//! Keyed, counter-based random streams.
//!
//! A stream is addressed by a root seed and a path of integer labels such as
//! `[chain, step, time, particle]`. The pair is hashed into a ChaCha key, so
//! any two distinct paths yield independent sequences and the draws for a
//! given path never depend on which thread, or in which order, it is consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub path: Vec<u64>,
}

impl RngStream {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Self {
            seed,
            path: path.to_vec(),
        }
    }

    pub fn root(seed: u64) -> Self {
        Self::new(seed, &[])
    }

    /// Stream one level deeper; does not consume anything from `self`.
    pub fn child(&self, label: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(label);
        Self {
            seed: self.seed,
            path,
        }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.key())
    }

    fn key(&self) -> [u8; 32] {
        // Length is folded in so that [] and [0] differ.
        let mut h = mix64(self.seed ^ 0x6A09_E667_F3BC_C908);
        h = mix64(h ^ (self.path.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for &label in &self.path {
            h = mix64(h.wrapping_add(0x9E37_79B9_7F4A_7C15) ^ mix64(label ^ 0xBB67_AE85_84CA_A73B));
        }
        let mut key = [0u8; 32];
        let mut state = h;
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        key
    }
}

/// `n` standard normal variates from the start of `stream`.
pub fn draw_stream(stream: &RngStream, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `n` uniform variates on `[0, 1)` from the start of `stream`.
pub fn draw_uniform(stream: &RngStream, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_draw() {
        assert!(draw_stream(&RngStream::root(1), 0).is_empty());
    }

    #[test]
    fn same_path_same_draws() {
        let s = RngStream::new(42, &[1, 2, 3]);
        assert_eq!(draw_stream(&s, 16), draw_stream(&s, 16));
        assert_eq!(s.child(9), RngStream::new(42, &[1, 2, 3, 9]));
    }

    #[test]
    fn distinct_paths_differ() {
        let a = draw_stream(&RngStream::new(42, &[1, 2, 3]), 4);
        let b = draw_stream(&RngStream::new(42, &[1, 2, 4]), 4);
        let c = draw_stream(&RngStream::new(43, &[1, 2, 3]), 4);
        let d = draw_stream(&RngStream::new(42, &[]), 4);
        let e = draw_stream(&RngStream::new(42, &[0]), 4);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(d, e);
    }

    #[test]
    fn prefix_consistent() {
        let s = RngStream::new(3, &[7]);
        let long = draw_stream(&s, 100);
        let short = draw_stream(&s, 10);
        assert_eq!(&long[..10], &short[..]);
    }

    #[test]
    fn million_draws_moments() {
        let x = draw_stream(&RngStream::root(7), 1_000_000);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniforms_in_unit_interval() {
        let u = draw_uniform(&RngStream::root(11), 10_000);
        assert!(u.iter().all(|&v| (0.0..1.0).contains(&v)));
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        assert!((mean - 0.5).abs() < 0.015);
    }
}
