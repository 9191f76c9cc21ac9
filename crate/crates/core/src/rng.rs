//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the tuple
//! `(global seed, particle key, epoch, purpose)`. Streams are therefore
//! reproducible from their key alone, independent of scheduling, and two
//! distinct keys never share a generator.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; part of the key so that the evolution and the
/// dissipation draws of one particle never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Evolution = 1,
    Dissipation = 2,
    Test = 0xffff,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, particle: u64, epoch: u64, purpose: Purpose) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&particle.to_le_bytes());
        key[16..24].copy_from_slice(&epoch.to_le_bytes());
        key[24..32].copy_from_slice(&(purpose as u64).to_le_bytes());
        RngStream {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }
}

/// Key of the `ordinal`-th particle born from `parent`.
///
/// Depends only on the parent's key and the birth order, so any traversal
/// order of the creation tree assigns the same keys.
pub fn child_key(parent: u64, ordinal: u64) -> u64 {
    splitmix64(parent ^ splitmix64(ordinal.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Root key of the particle at position `index` of the ensemble at the start
/// of an epoch.
pub fn root_key(index: usize) -> u64 {
    splitmix64(index as u64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_reproduce() {
        let mut a = RngStream::new(7, 42, 3, Purpose::Evolution);
        let mut b = RngStream::new(7, 42, 3, Purpose::Evolution);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn any_key_component_changes_the_stream() {
        let first = |s: u64, p: u64, e: u64, purpose| RngStream::new(s, p, e, purpose).uniform();
        let base = first(7, 42, 3, Purpose::Evolution);
        assert_ne!(base, first(8, 42, 3, Purpose::Evolution));
        assert_ne!(base, first(7, 43, 3, Purpose::Evolution));
        assert_ne!(base, first(7, 42, 4, Purpose::Evolution));
        assert_ne!(base, first(7, 42, 3, Purpose::Dissipation));
    }

    #[test]
    fn open_uniform_stays_inside() {
        let mut r = RngStream::new(1, 2, 3, Purpose::Test);
        for _ in 0..100_000 {
            let u = r.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        // Pearson correlation of the first draws of adjacent particle keys.
        let n = 20_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| RngStream::new(5, root_key(i), 0, Purpose::Test).uniform())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>()
            / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0 / n as f64).sqrt());
        assert!((cov / var).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn child_keys_are_distinct() {
        let mut keys: Vec<u64> = (0..1000u64).flat_map(|p| (0..8).map(move |o| child_key(p, o))).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 8000);
    }
}
