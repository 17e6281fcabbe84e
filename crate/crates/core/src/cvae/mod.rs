//! Predictive motion prior: a conditional VAE over consecutive upper-body windows.
//!
//! The prior `R(z | M0)` sees the past window, the encoder `E(z | M0, M1)` also sees the
//! future window, and the decoder reconstructs `M1` from `[z, M0]`. At runtime the prior
//! mean over the most recent commanded targets is the latent the policy observes.

mod model;
mod train;

pub use model::{kl_diag_gaussians, CvaeConfig, CvaeGrads, CvaeModel, ElboOutput, ElboParts};
pub use train::{pair_set_mse, split_clips, train_cvae, train_cvae_with, CvaeTraining, EpochStats, PairSet};

use crate::error::Result;
use crate::scalar::Real;

/// How the runtime latent is read from the prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentMode {
    #[default]
    Mean,
    Sample,
}

/// The last `W` upper-body target frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionRing {
    window: usize,
    n_upper: usize,
    flat: Vec<f64>,
}

impl MotionRing {
    /// A ring holding `window` copies of `frame`.
    pub fn filled(window: usize, frame: &[f64]) -> Self {
        assert!(window >= 1 && !frame.is_empty());
        MotionRing {
            window,
            n_upper: frame.len(),
            flat: frame.repeat(window),
        }
    }

    pub fn reset(&mut self, frame: &[f64]) {
        assert_eq!(frame.len(), self.n_upper);
        for chunk in self.flat.chunks_exact_mut(self.n_upper) {
            chunk.copy_from_slice(frame);
        }
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push(&mut self, frame: &[f64]) {
        assert_eq!(frame.len(), self.n_upper);
        self.flat.rotate_left(self.n_upper);
        let start = self.flat.len() - self.n_upper;
        self.flat[start..].copy_from_slice(frame);
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n_upper(&self) -> usize {
        self.n_upper
    }

    /// Frame-major contents, oldest first.
    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn newest(&self) -> &[f64] {
        &self.flat[self.flat.len() - self.n_upper..]
    }
}

/// Prior mean over the ring contents.
pub fn pmp_latent<T: Real>(model: &CvaeModel<T>, ring: &MotionRing) -> Result<Vec<T>> {
    let m0: Vec<T> = ring.as_flat().iter().map(|&v| T::of(v)).collect();
    Ok(model.prior_forward(&m0)?.mu)
}

/// A reparameterized sample from the prior over the ring contents.
pub fn pmp_latent_sample<T: Real>(model: &CvaeModel<T>, ring: &MotionRing, noise: &[T]) -> Result<Vec<T>> {
    let m0: Vec<T> = ring.as_flat().iter().map(|&v| T::of(v)).collect();
    let p = model.prior_forward(&m0)?;
    crate::nn::gaussian_reparam_sample(&p.mu, &p.log_sigma, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, GaussianParams, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> CvaeConfig {
        CvaeConfig {
            window: 4,
            latent_dim: 3,
            hidden: vec![6, 5],
            ..CvaeConfig::default()
        }
    }

    #[test]
    fn kl_identity_and_unit_shift() {
        let p = GaussianParams::<f64>::new(vec![0.3, -1.2], vec![0.1, -0.4]).unwrap();
        assert!(kl_diag_gaussians(&p, &p).unwrap().abs() < 1e-12);
        let q = GaussianParams::new(vec![0.0], vec![0.0]).unwrap();
        let p = GaussianParams::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_diag_gaussians(&q, &p).unwrap() - 0.5f64).abs() < 1e-15);
        let short = GaussianParams::new(vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert!(kl_diag_gaussians(&q, &short).is_err());
    }

    #[test]
    fn default_heads_are_64_wide() {
        let m = CvaeModel::<f64>::new(CvaeConfig::default(), 4, 0).unwrap();
        let g = m.prior_forward(&vec![0.1; 200]).unwrap();
        assert_eq!((g.mu.len(), g.log_sigma.len()), (64, 64));
        assert_eq!(m.decoder_forward(&g.mu, &vec![0.1; 200]).unwrap().len(), 200);
    }

    #[test]
    fn zero_weight_prior_returns_bias() {
        let mut m = CvaeModel::<f64>::new(small_config(), 2, 1).unwrap();
        let h = m.latent_dim();
        let n = m.prior_params.len();
        for (_, t) in m.prior_params.iter_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let last = m.prior_params.tensor_mut(n - 1);
        for (i, v) in last.values.iter_mut().enumerate() {
            *v = if i < h { i as f64 } else { 4.0 };
        }
        let g = m.prior_forward(&[0.7; 8]).unwrap();
        assert_eq!(g.mu, vec![0.0, 1.0, 2.0]);
        assert_eq!(g.log_sigma, vec![2.0; 3]);
    }

    #[test]
    fn shape_errors() {
        let m = CvaeModel::<f64>::new(small_config(), 2, 1).unwrap();
        assert!(m.prior_forward(&[0.0; 7]).is_err());
        assert!(m.encoder_forward(&[0.0; 8], &[0.0; 9]).is_err());
        assert!(m.decoder_forward(&[0.0; 2], &[0.0; 8]).is_err());
        assert!(m.elbo_loss(&[0.0; 8], &[0.0; 8], &[0.0; 2]).is_err());
    }

    #[test]
    fn loss_decomposes() {
        let mut cfg = small_config();
        cfg.kl_weight = 0.7;
        let m = CvaeModel::<f64>::new(cfg, 2, 2).unwrap();
        let m0: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let m1: Vec<f64> = (0..8).map(|i| -0.05 * i as f64).collect();
        let out = m.elbo_loss(&m0, &m1, &[0.3, -0.2, 1.0]).unwrap();
        assert!((out.loss - (out.parts.recon + 0.7 * out.parts.kl)).abs() < 1e-15);
        assert!(out.parts.kl >= 0.0);
    }

    #[test]
    fn perfect_decoder_with_zero_beta_has_zero_loss() {
        let mut cfg = small_config();
        cfg.kl_weight = 0.0;
        cfg.anchored = false;
        let mut m = CvaeModel::<f64>::new(cfg, 2, 3).unwrap();
        // a decoder with zero weights reproduces its output bias
        let m1: Vec<f64> = (0..8).map(|i| 0.2 - 0.03 * i as f64).collect();
        let n = m.decoder_params.len();
        for k in 0..n {
            m.decoder_params.tensor_mut(k).values.iter_mut().for_each(|v| *v = 0.0);
        }
        m.decoder_params.tensor_mut(n - 1).values.copy_from_slice(&m1);
        let out = m.elbo_loss(&[0.5; 8], &m1, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    fn merged_check(cfg: CvaeConfig, batch: usize, seed: u64) -> f64 {
        let model = CvaeModel::<f64>::new(cfg, 2, seed).unwrap();
        let d = model.window_len();
        let h = model.latent_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let m0: Vec<f64> = (0..batch * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m1: Vec<f64> = (0..batch * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..batch * h).map(|_| rng.random_range(-1.5..1.5)).collect();
        let params = model.merged_params();
        let report = finite_diff_check(
            |p: &ParamStore<f64>| {
                let mut m = model.clone();
                m.set_merged_params(p).unwrap();
                let out = m.elbo_batch(&m0, &m1, &noise, batch).unwrap();
                let mut g = ParamStore::new();
                g.merge_prefixed("prior.", &out.grads.prior).unwrap();
                g.merge_prefixed("encoder.", &out.grads.encoder).unwrap();
                g.merge_prefixed("decoder.", &out.grads.decoder).unwrap();
                (out.loss, g)
            },
            &params,
            1e-5,
        );
        report.max_rel_error
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        for seed in 0..3 {
            let err = merged_check(small_config(), 1, seed);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
        let err = merged_check(small_config(), 3, 9);
        assert!(err < 1e-4, "batch: {err}");
    }

    #[test]
    fn ring_keeps_last_w_frames() {
        let mut r = MotionRing::filled(3, &[0.0, 1.0]);
        r.push(&[2.0, 3.0]);
        r.push(&[4.0, 5.0]);
        assert_eq!(r.as_flat(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        r.push(&[6.0, 7.0]);
        assert_eq!(r.as_flat(), &[2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(r.newest(), &[6.0, 7.0]);
        r.reset(&[1.0, 1.0]);
        assert_eq!(r.as_flat(), &[1.0; 6]);
    }

    #[test]
    fn latent_is_pure_and_mean_based() {
        let m = CvaeModel::<f64>::new(small_config(), 2, 4).unwrap();
        let ring = MotionRing::filled(4, &[0.0, 0.3]);
        let a = pmp_latent(&m, &ring).unwrap();
        let b = pmp_latent(&m, &ring.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, pmp_latent_sample(&m, &ring, &[0.0; 3]).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs_to_f32() {
        let m = CvaeModel::<f64>::new(small_config(), 2, 5).unwrap();
        let bytes = m.to_checkpoint().to_bytes();
        let back = CvaeModel::<f64>::from_checkpoint(&crate::nn::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.config.window, 4);
        assert_eq!(back.config.hidden, vec![6, 5]);
        let x = [0.2; 8];
        let (a, b) = (m.prior_forward(&x).unwrap(), back.prior_forward(&x).unwrap());
        for (u, v) in a.mu.iter().zip(&b.mu) {
            assert!((u - v).abs() < 1e-5);
        }
    }
}
