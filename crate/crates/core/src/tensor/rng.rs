use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Scalar, Tensor};
use crate::error::{ForgeError, Result};

/// Seeded, platform-independent random stream.
///
/// Independent sub-streams are obtained with [`Rng::derive`], which never
/// consumes state from the parent, so adding a new consumer does not shift
/// any existing stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn derive(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn sample_normal<T: Scalar>(rng: &mut Rng, sigma: f64, shape: &[usize]) -> Tensor<T> {
    sample_truncated_normal(rng, sigma, f64::INFINITY, shape).expect("valid normal parameters")
}

/// Zero-mean normal with standard deviation `sigma`, redrawn until each
/// value lies in `[-bound, bound]`.
pub fn sample_truncated_normal<T: Scalar>(
    rng: &mut Rng,
    sigma: f64,
    bound: f64,
    shape: &[usize],
) -> Result<Tensor<T>> {
    if !(sigma > 0.0) || !(bound > 0.0) {
        return Err(ForgeError::contract(format!(
            "truncated normal needs sigma > 0 and bound > 0, got {sigma} and {bound}"
        )));
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let v = sigma * rng.standard_normal();
        if v.abs() <= bound {
            data.push(T::of(v));
        }
    }
    Tensor::new(shape, data)
}

/// Half-width of the Kaiming-uniform interval with the leaky-rectifier
/// gain for `a = sqrt(5)`: `sqrt(6 / ((1 + 5) * fan_in)) = sqrt(1 / fan_in)`.
pub fn kaiming_uniform_bound(fan_in: usize) -> f64 {
    let gain = (2.0 / (1.0 + 5.0_f64)).sqrt();
    gain * (3.0 / fan_in as f64).sqrt()
}

pub fn sample_kaiming_uniform<T: Scalar>(
    rng: &mut Rng,
    fan_in: usize,
    shape: &[usize],
) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(ForgeError::contract("kaiming uniform needs fan_in >= 1"));
    }
    let bound = kaiming_uniform_bound(fan_in);
    sample_uniform(rng, bound, shape)
}

pub(crate) fn sample_uniform<T: Scalar>(
    rng: &mut Rng,
    bound: f64,
    shape: &[usize],
) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.uniform_range(-bound, bound)))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a: Tensor<f64> = sample_truncated_normal(&mut Rng::new(7), 0.01, 0.02, &[64]).unwrap();
        let b: Tensor<f64> = sample_truncated_normal(&mut Rng::new(7), 0.01, 0.02, &[64]).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn derived_streams_differ_and_are_stable() {
        let root = Rng::new(3);
        let mut a = root.derive(1);
        let mut b = root.derive(2);
        let mut a2 = root.derive(1);
        let x = a.uniform();
        assert_ne!(x, b.uniform());
        assert_eq!(x, a2.uniform());
    }

    #[test]
    fn truncation_bound_holds() {
        let t: Tensor<f32> = sample_truncated_normal(&mut Rng::new(1), 0.01, 0.02, &[10_000]).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 0.02));
    }

    #[test]
    fn plain_normal_std() {
        let t: Tensor<f64> = sample_normal(&mut Rng::new(11), 0.02, &[100_000]);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.02).abs() / 0.02 < 0.05);
    }

    #[test]
    fn kaiming_bound_is_inverse_sqrt_fan_in() {
        assert!((kaiming_uniform_bound(768) - (1.0 / 768.0_f64).sqrt()).abs() < 1e-15);
        let t: Tensor<f64> = sample_kaiming_uniform(&mut Rng::new(5), 768, &[100_000]).unwrap();
        let bound = kaiming_uniform_bound(768);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // mean of U(-b, b) has std b / sqrt(3n)
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 3.0 * bound / (3.0 * t.len() as f64).sqrt());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(sample_truncated_normal::<f64>(&mut Rng::new(0), 0.0, 1.0, &[2]).is_err());
        assert!(sample_kaiming_uniform::<f64>(&mut Rng::new(0), 0, &[2]).is_err());
    }
}
