//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed plus a path of
//! integers (for example `[round, simulation index]`). Two streams with the
//! same seed and path produce identical output regardless of which thread
//! or in which order they are created.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, StandardNormal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, &[])
    }

    /// Independent stream identified by `(seed, path)`.
    pub fn stream(seed: u64, path: &[u64]) -> Self {
        let mut key = [0u8; 32];
        let mut h = splitmix64(seed);
        for &p in path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0xA5A5_A5A5)));
        }
        for (i, chunk) in key.chunks_mut(8).enumerate() {
            h = splitmix64(h.wrapping_add(i as u64));
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        Self {
            seed,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// A child stream derived from this stream's seed (not its position).
    pub fn derive(&self, path: &[u64]) -> Self {
        Self::stream(self.seed, path)
    }

    /// A child stream that also depends on this stream's current position.
    pub fn fork(&mut self) -> Self {
        let s = self.inner.next_u64();
        Self::stream(s, &[self.seed])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.inner.random::<f64>();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    pub fn sample<T, D: Distribution<T>>(&mut self, dist: &D) -> T {
        dist.sample(&mut self.inner)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Elementary distributions drawn by [`draw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform { low: f64, high: f64 },
    StandardNormal,
    LogNormal { mu: f64, sigma: f64 },
    Binomial { n: u64, p: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Dist::StandardNormal => true,
            Dist::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            Dist::Binomial { p, .. } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{self:?}")))
        }
    }
}

/// Draw a tensor of iid values from `dist`.
pub fn draw(rng: &mut Rng, dist: Dist, shape: Vec<usize>) -> Result<Tensor> {
    dist.validate()?;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = match dist {
        Dist::Uniform { low, high } => (0..n).map(|_| low + (high - low) * rng.uniform()).collect(),
        Dist::StandardNormal => (0..n).map(|_| rng.normal()).collect(),
        Dist::LogNormal { mu, sigma } => {
            let d = LogNormal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            (0..n).map(|_| rng.sample(&d)).collect()
        }
        Dist::Binomial { n: trials, p } => {
            let d = Binomial::new(trials, p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            (0..n).map(|_| rng.sample(&d) as f64).collect()
        }
    };
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn degenerate_uniform_rejected() {
        let mut rng = Rng::new(0);
        assert!(draw(&mut rng, Dist::Uniform { low: 0.0, high: 0.0 }, vec![3]).is_err());
        assert!(draw(&mut rng, Dist::LogNormal { mu: 0.0, sigma: 0.0 }, vec![3]).is_err());
        assert!(draw(&mut rng, Dist::Binomial { n: 3, p: 1.5 }, vec![3]).is_err());
    }

    #[test]
    fn uniform_mean() {
        let mut rng = Rng::new(11);
        let t = draw(&mut rng, Dist::Uniform { low: 0.0, high: 1.0 }, vec![1_000_000]).unwrap();
        let (m, _) = mean_var(t.data());
        assert!((m - 0.5).abs() < 0.002, "{m}");
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = Rng::new(12);
        let t = draw(&mut rng, Dist::StandardNormal, vec![1_000_000]).unwrap();
        let (m, v) = mean_var(t.data());
        assert!(m.abs() < 0.01, "{m}");
        assert!((0.99..=1.01).contains(&v), "{v}");
    }

    #[test]
    fn binomial_with_zero_probability() {
        let mut rng = Rng::new(3);
        let t = draw(&mut rng, Dist::Binomial { n: 1000, p: 0.0 }, vec![500]).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = {
            let mut r = Rng::stream(5, &[1, 2]);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = Rng::stream(5, &[1, 2]);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = Rng::stream(5, &[2, 1]);
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
