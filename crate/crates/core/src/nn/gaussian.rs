//! Diagonal Gaussian heads and the reparameterized sample.

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Mean and log standard deviation of a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<T> {
    pub mu: Vec<T>,
    pub log_sigma: Vec<T>,
}

impl<T: Real> GaussianParams<T> {
    pub fn new(mu: Vec<T>, log_sigma: Vec<T>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::shape(format!(
                "gaussian mean has {} entries, log sigma {}",
                mu.len(),
                log_sigma.len()
            )));
        }
        Ok(GaussianParams { mu, log_sigma })
    }

    /// Splits a network head `[mu | raw_log_sigma]` and clamps the log-sigma half.
    pub fn from_head(head: &[T]) -> Self {
        let h = head.len() / 2;
        GaussianParams {
            mu: head[..h].to_vec(),
            log_sigma: head[h..2 * h].iter().map(|&v| clamp_log_sigma(v)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

pub fn clamp_log_sigma<T: Real>(v: T) -> T {
    v.max(T::of(LOG_SIGMA_MIN)).min(T::of(LOG_SIGMA_MAX))
}

/// Derivative of the clamp: one strictly inside the bounds, zero outside.
pub fn clamp_log_sigma_grad<T: Real>(raw: T) -> T {
    if raw > T::of(LOG_SIGMA_MIN) && raw < T::of(LOG_SIGMA_MAX) {
        T::one()
    } else {
        T::zero()
    }
}

/// `mu + exp(log_sigma) * noise`.
pub fn gaussian_reparam_sample<T: Real>(mu: &[T], log_sigma: &[T], noise: &[T]) -> Result<Vec<T>> {
    if mu.len() != log_sigma.len() || mu.len() != noise.len() {
        return Err(Error::shape(format!(
            "reparameterized sample needs equal lengths, got {}/{}/{}",
            mu.len(),
            log_sigma.len(),
            noise.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(log_sigma)
        .zip(noise)
        .map(|((&m, &s), &n)| m + s.exp() * n)
        .collect())
}

/// Pulls a gradient on the sample back to `(d mu, d log_sigma)` for fixed noise.
pub fn gaussian_reparam_backward<T: Real>(dz: &[T], log_sigma: &[T], noise: &[T]) -> (Vec<T>, Vec<T>) {
    let dmu = dz.to_vec();
    let dls = dz
        .iter()
        .zip(log_sigma)
        .zip(noise)
        .map(|((&d, &s), &n)| d * s.exp() * n)
        .collect();
    (dmu, dls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_check_vec;

    #[test]
    fn zero_noise_returns_mean() {
        let z = gaussian_reparam_sample(&[0.5, -1.0], &[0.3, 1.1], &[0.0, 0.0]).unwrap();
        assert_eq!(z, vec![0.5, -1.0]);
    }

    #[test]
    fn unit_sigma_adds_noise() {
        let z = gaussian_reparam_sample(&[0.5, -1.0], &[0.0, 0.0], &[0.25, 2.0]).unwrap();
        assert_eq!(z, vec![0.75, 1.0]);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        assert!(gaussian_reparam_sample(&[0.0], &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn log_sigma_gradient_matches_finite_differences() {
        let mu = [0.2, -0.7, 1.1];
        let ls = [-0.3, 0.4, 0.0];
        let noise = [1.3, -0.6, 0.8];
        let weights = [0.5, -2.0, 1.5];
        let loss = |ls: &[f64]| -> f64 {
            let z = gaussian_reparam_sample(&mu, ls, &noise).unwrap();
            z.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let (_, dls) = gaussian_reparam_backward(&weights, &ls, &noise);
        let err = finite_diff_check_vec(loss, &ls, &dls, 1e-5);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn head_split_clamps() {
        let g = GaussianParams::from_head(&[1.0, 2.0, -9.0, 9.0]);
        assert_eq!(g.mu, vec![1.0, 2.0]);
        assert_eq!(g.log_sigma, vec![LOG_SIGMA_MIN, LOG_SIGMA_MAX]);
    }
}
