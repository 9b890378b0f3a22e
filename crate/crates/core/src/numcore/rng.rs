//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so the whole
//! generator state is four counters. Persisting them is enough to resume a run
//! bit-exactly.

use alloc::vec::Vec;

use super::Matrix;
use crate::error::{config, Result};
use crate::math;

/// Independent named substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Base-distribution sampling.
    Base = 0,
    /// Metropolis–Hastings proposals and acceptance draws.
    Mcmc = 1,
    /// Parameter initialization.
    Init = 2,
    /// Minibatch selection.
    Data = 3,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Base, Stream::Mcmc, Stream::Init, Stream::Data];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counters: [u64; 4],
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            counters: [0; 4],
        }
    }

    /// Restores a generator from persisted state.
    pub fn from_state(seed: u64, counters: [u64; 4]) -> Self {
        Rng { seed, counters }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counters(&self) -> [u64; 4] {
        self.counters
    }

    pub fn stream(&mut self, stream: Stream) -> StreamRng<'_> {
        let key = mix64(self.seed ^ mix64((stream as u64 + 1).wrapping_mul(GOLDEN)));
        StreamRng {
            key,
            counter: &mut self.counters[stream as usize],
        }
    }
}

/// Mutable view on one substream of an [`Rng`].
pub struct StreamRng<'a> {
    key: u64,
    counter: &'a mut u64,
}

impl StreamRng<'_> {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = *self.counter;
        *self.counter = c.wrapping_add(1);
        mix64(self.key.wrapping_add(mix64(c.wrapping_mul(GOLDEN) ^ self.key)))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; one normal per two uniforms.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(math::TAU * u2)
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let x = lo + (hi - lo) * self.uniform01();
        if x >= hi {
            lo
        } else {
            x
        }
    }

    /// Index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform01() * n as f64) as usize).min(n - 1)
    }

    pub fn normal_matrix(&mut self, n: usize, d: usize) -> Result<Matrix> {
        if n == 0 || d == 0 {
            return config("normal matrix needs n >= 1 and d >= 1");
        }
        let data: Vec<f64> = (0..n * d).map(|_| self.normal()).collect();
        Matrix::from_vec(n, d, data)
    }

    pub fn uniform_matrix(&mut self, n: usize, d: usize, lo: f64, hi: f64) -> Result<Matrix> {
        if n == 0 || d == 0 {
            return config("uniform matrix needs n >= 1 and d >= 1");
        }
        if !(lo < hi) {
            return config("uniform matrix needs lo < hi");
        }
        let data: Vec<f64> = (0..n * d).map(|_| self.uniform(lo, hi)).collect();
        Matrix::from_vec(n, d, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(7).stream(Stream::Base).normal_matrix(5, 3).unwrap();
        let b = Rng::new(7).stream(Stream::Base).normal_matrix(5, 3).unwrap();
        assert_eq!(a, b);
        let c = Rng::new(8).stream(Stream::Base).normal_matrix(5, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn substreams_are_independent_of_each_other() {
        let mut r1 = Rng::new(1);
        let a = r1.stream(Stream::Base).normal_matrix(4, 1).unwrap();
        let mut r2 = Rng::new(1);
        r2.stream(Stream::Mcmc).normal_matrix(100, 1).unwrap();
        let b = r2.stream(Stream::Base).normal_matrix(4, 1).unwrap();
        assert_eq!(a, b);
        let m = Rng::new(1).stream(Stream::Mcmc).normal_matrix(4, 1).unwrap();
        assert_ne!(a, m);
    }

    #[test]
    fn resume_from_state() {
        let mut r = Rng::new(3);
        r.stream(Stream::Base).normal_matrix(10, 2).unwrap();
        let mut resumed = Rng::from_state(r.seed(), r.counters());
        assert_eq!(
            r.stream(Stream::Base).normal_matrix(3, 3).unwrap(),
            resumed.stream(Stream::Base).normal_matrix(3, 3).unwrap()
        );
    }

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(2024);
        let m = r.stream(Stream::Base).normal_matrix(1_000_000, 1).unwrap();
        let mean = m.mean();
        let var = m.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 1e6;
        assert!(mean.abs() < 5e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn uniform_range() {
        let mut r = Rng::new(5);
        let m = r
            .stream(Stream::Base)
            .uniform_matrix(100_000, 1, -PI, PI)
            .unwrap();
        assert!(m.data().iter().all(|&x| (-PI..PI).contains(&x)));
    }

    #[test]
    fn preconditions() {
        let mut r = Rng::new(0);
        assert!(r.stream(Stream::Base).normal_matrix(0, 1).is_err());
        assert!(r.stream(Stream::Base).uniform_matrix(1, 1, 1.0, 1.0).is_err());
    }
}
