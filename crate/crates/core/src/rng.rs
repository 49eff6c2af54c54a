//! Seeded, splittable randomness.
//!
//! [`Rng`] wraps the ChaCha20 stream cipher used as a counter-based
//! generator: a `(seed, stream)` pair fully determines the draw sequence on
//! every platform, and [`Rng::split`] hands out independent streams so each
//! source node draws from its own sequence under one master seed.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream. Depends only on this generator's identity
    /// and `id`, never on how many draws were already made.
    pub fn split(&self, id: u64) -> Self {
        let stream = splitmix(self.stream ^ splitmix(id.wrapping_add(0x5EED)));
        Self::with_stream(self.seed, stream)
    }

    /// Child stream keyed by a label, for readable call sites.
    pub fn split_named(&self, label: &str) -> Self {
        let h = label
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
                (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
            });
        self.split(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        use rand::seq::SliceRandom;
        xs.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n` in random order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec()
    }

    /// Index drawn from a discrete distribution given by non-negative weights.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
        last
    }
}

/// Uniformly random direction on the unit sphere in `R^d`.
pub fn sample_unit_sphere(d: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension("unit sphere needs d >= 1".into()));
    }
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let n = crate::linalg::norm(&v);
        if n > 1e-12 && n.is_finite() {
            v.iter_mut().for_each(|x| *x /= n);
            return Ok(v);
        }
    }
}

/// Draw `mu + chol · z` with `z ~ N(0, I)`.
pub fn sample_gaussian(mu: &[f64], chol: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
    if chol.rows() != mu.len() || chol.cols() != mu.len() {
        return Err(Error::InvalidDimension(format!(
            "mean has length {} but factor is {}x{}",
            mu.len(),
            chol.rows(),
            chol.cols()
        )));
    }
    let z: Vec<f64> = (0..mu.len()).map(|_| rng.normal()).collect();
    let mut out = mu.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        // lower triangle only
        *o += crate::linalg::dot(&chol.row(i)[..=i], &z[..=i]);
    }
    Ok(out)
}
