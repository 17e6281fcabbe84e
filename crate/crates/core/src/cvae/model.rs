//! Prior, encoder and decoder networks over upper-body motion windows.

use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::gaussian::clamp_log_sigma_grad;
use crate::nn::{gaussian_reparam_sample, Activation, Checkpoint, GaussianParams, Mlp, MlpConfig, ParamStore};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvaeConfig {
    /// Frames per window.
    pub window: usize,
    /// Latent size.
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Frame step between consecutive training pairs.
    pub stride: usize,
    /// Fraction of clips held out for evaluation; at least one clip stays in training.
    pub holdout_fraction: f64,
    pub grad_clip: Option<f64>,
    /// All three networks work in coordinates relative to the last frame of `m0`: inputs
    /// have it subtracted and the decoder predicts offsets from it.
    pub anchored: bool,
    /// Random mirroring, scaling and joint permutation of training pairs.
    pub augment: bool,
    pub seed: u64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        CvaeConfig {
            window: 50,
            latent_dim: 64,
            hidden: vec![256, 256],
            activation: Activation::Tanh,
            kl_weight: 1.0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            stride: 2,
            holdout_fraction: 0.2,
            grad_clip: Some(10.0),
            anchored: true,
            augment: true,
            seed: 0,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.latent_dim == 0 {
            return Err(Error::Argument("window and latent_dim must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Argument(format!("kl_weight must be >= 0, got {}", self.kl_weight)));
        }
        if self.batch_size == 0 || self.stride == 0 {
            return Err(Error::Argument("batch_size and stride must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Argument("holdout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Gradients for the three networks, each laid out like its parameter store.
#[derive(Debug, Clone)]
pub struct CvaeGrads<T> {
    pub prior: ParamStore<T>,
    pub encoder: ParamStore<T>,
    pub decoder: ParamStore<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct ElboOutput<T> {
    /// Batch mean of `recon + kl_weight * kl`.
    pub loss: T,
    pub parts: ElboParts,
    pub grads: CvaeGrads<T>,
}

#[derive(Debug, Clone)]
pub struct CvaeModel<T> {
    pub config: CvaeConfig,
    pub n_upper: usize,
    prior: Mlp,
    encoder: Mlp,
    decoder: Mlp,
    pub prior_params: ParamStore<T>,
    pub encoder_params: ParamStore<T>,
    pub decoder_params: ParamStore<T>,
}

fn net_configs(config: &CvaeConfig, n_upper: usize) -> [MlpConfig; 3] {
    let d = config.window * n_upper;
    let h = config.latent_dim;
    let mk = |i, o| {
        MlpConfig::new(i, o)
            .with_hidden(config.hidden.clone())
            .with_activation(config.activation)
    };
    [mk(d, 2 * h), mk(2 * d, 2 * h), mk(h + d, d)]
}

/// Closed-form `KL(q || p)` between diagonal Gaussians.
pub fn kl_diag_gaussians<T: Real>(q: &GaussianParams<T>, p: &GaussianParams<T>) -> Result<T> {
    if q.dim() != p.dim() {
        return Err(Error::shape(format!("KL between {}-dim and {}-dim Gaussians", q.dim(), p.dim())));
    }
    let half = T::of(0.5);
    let mut kl = T::zero();
    for i in 0..q.dim() {
        let vq = (q.log_sigma[i] + q.log_sigma[i]).exp();
        let vp = (p.log_sigma[i] + p.log_sigma[i]).exp();
        let d = q.mu[i] - p.mu[i];
        kl += p.log_sigma[i] - q.log_sigma[i] + (vq + d * d) / (vp + vp) - half;
    }
    Ok(kl)
}

/// Partial derivatives of the KL with respect to `(mu_q, ls_q, mu_p, ls_p)` at index `i`.
#[inline]
fn kl_grad<T: Real>(q: &GaussianParams<T>, p: &GaussianParams<T>, i: usize) -> [T; 4] {
    let vq = (q.log_sigma[i] + q.log_sigma[i]).exp();
    let vp = (p.log_sigma[i] + p.log_sigma[i]).exp();
    let d = q.mu[i] - p.mu[i];
    [d / vp, vq / vp - T::one(), -d / vp, T::one() - (vq + d * d) / vp]
}

impl<T: Real> CvaeModel<T> {
    /// Fresh model; the three networks draw from one ChaCha8 stream seeded with `seed` in
    /// the order prior, encoder, decoder.
    pub fn new(config: CvaeConfig, n_upper: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_upper == 0 {
            return Err(Error::Argument("n_upper must be at least 1".into()));
        }
        let [pc, ec, dc] = net_configs(&config, n_upper);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prior_params = ParamStore::new();
        let mut encoder_params = ParamStore::new();
        let mut decoder_params = ParamStore::new();
        let prior = Mlp::register(pc, "", &mut prior_params, &mut rng)?;
        let encoder = Mlp::register(ec, "", &mut encoder_params, &mut rng)?;
        let decoder = Mlp::register(dc, "", &mut decoder_params, &mut rng)?;
        Ok(CvaeModel {
            config,
            n_upper,
            prior,
            encoder,
            decoder,
            prior_params,
            encoder_params,
            decoder_params,
        })
    }

    /// `W * n_upper`.
    pub fn window_len(&self) -> usize {
        self.config.window * self.n_upper
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_window(&self, what: &str, v: &[T], batch: usize) -> Result<()> {
        if v.len() != batch * self.window_len() {
            return Err(Error::shape(format!(
                "{what}: expected {batch} x {} values, got {}",
                self.window_len(),
                v.len()
            )));
        }
        Ok(())
    }

    pub fn prior_forward(&self, m0: &[T]) -> Result<GaussianParams<T>> {
        self.check_window("prior input", m0, 1)?;
        let y = self.prior.predict(&self.prior_params, &self.relative(m0, m0, 1), 1)?;
        Ok(GaussianParams::from_head(&y))
    }

    pub fn encoder_forward(&self, m0: &[T], m1: &[T]) -> Result<GaussianParams<T>> {
        self.check_window("encoder m0", m0, 1)?;
        self.check_window("encoder m1", m1, 1)?;
        let x: Vec<T> = self
            .relative(m0, m0, 1)
            .iter()
            .chain(self.relative(m1, m0, 1).iter())
            .copied()
            .collect();
        let y = self.encoder.predict(&self.encoder_params, &x, 1)?;
        Ok(GaussianParams::from_head(&y))
    }

    pub fn decoder_forward(&self, z: &[T], m0: &[T]) -> Result<Vec<T>> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape(format!(
                "latent has {} entries, expected {}",
                z.len(),
                self.latent_dim()
            )));
        }
        self.check_window("decoder m0", m0, 1)?;
        let x: Vec<T> = z.iter().chain(self.relative(m0, m0, 1).iter()).copied().collect();
        let mut y = self.decoder.predict(&self.decoder_params, &x, 1)?;
        if self.config.anchored {
            self.shift(&mut y, m0, 1, T::one());
        }
        Ok(y)
    }

    /// `w - anchor` row by row, where the anchor is the last frame of the matching `m0` row.
    fn relative<'a>(&self, w: &'a [T], m0: &[T], batch: usize) -> Cow<'a, [T]> {
        if !self.config.anchored {
            return Cow::Borrowed(w);
        }
        let mut out = w.to_vec();
        self.shift(&mut out, m0, batch, -T::one());
        Cow::Owned(out)
    }

    fn shift(&self, w: &mut [T], m0: &[T], batch: usize, sign: T) {
        let (d, n) = (self.window_len(), self.n_upper);
        for b in 0..batch {
            let last = &m0[(b + 1) * d - n..(b + 1) * d];
            for frame in w[b * d..(b + 1) * d].chunks_exact_mut(n) {
                for (p, a) in frame.iter_mut().zip(last) {
                    *p += sign * *a;
                }
            }
        }
    }

    /// Single-pair ELBO loss with gradients for all three networks.
    pub fn elbo_loss(&self, m0: &[T], m1: &[T], noise: &[T]) -> Result<ElboOutput<T>> {
        self.elbo_batch(m0, m1, noise, 1)
    }

    /// Batch-mean ELBO loss over `batch` row-major pairs; `noise` holds one latent-sized
    /// standard-normal row per pair.
    ///
    /// Reconstruction gradients reach the encoder through the reparameterized sample;
    /// the prior is trained by the KL term only.
    pub fn elbo_batch(&self, m0: &[T], m1: &[T], noise: &[T], batch: usize) -> Result<ElboOutput<T>> {
        self.check_window("m0", m0, batch)?;
        self.check_window("m1", m1, batch)?;
        let (d, h) = (self.window_len(), self.latent_dim());
        if noise.len() != batch * h {
            return Err(Error::shape(format!("noise: expected {} values, got {}", batch * h, noise.len())));
        }
        let m1 = &*self.relative(m1, m0, batch);
        let m0 = &*self.relative(m0, m0, batch);
        let enc_in: Vec<T> = (0..batch)
            .flat_map(|b| m0[b * d..(b + 1) * d].iter().chain(&m1[b * d..(b + 1) * d]).copied())
            .collect();
        let (prior_head, prior_tape) = self.prior.forward_batch(&self.prior_params, m0, batch)?;
        let (enc_head, enc_tape) = self.encoder.forward_batch(&self.encoder_params, &enc_in, batch)?;

        let mut qs = Vec::with_capacity(batch);
        let mut ps = Vec::with_capacity(batch);
        let mut dec_in = Vec::with_capacity(batch * (h + d));
        for b in 0..batch {
            let q = GaussianParams::from_head(&enc_head[b * 2 * h..(b + 1) * 2 * h]);
            let p = GaussianParams::from_head(&prior_head[b * 2 * h..(b + 1) * 2 * h]);
            let z = gaussian_reparam_sample(&q.mu, &q.log_sigma, &noise[b * h..(b + 1) * h])?;
            dec_in.extend_from_slice(&z);
            dec_in.extend_from_slice(&m0[b * d..(b + 1) * d]);
            qs.push(q);
            ps.push(p);
        }
        let (pred, dec_tape) = self.decoder.forward_batch(&self.decoder_params, &dec_in, batch)?;

        let inv_b = T::one() / T::of(batch as f64);
        let inv_d = T::one() / T::of(d as f64);
        let beta = T::of(self.config.kl_weight);
        let two = T::of(2.0);
        let mut recon = T::zero();
        let mut dpred = vec![T::zero(); batch * d];
        for i in 0..batch * d {
            let e = pred[i] - m1[i];
            recon += e * e;
            dpred[i] = two * e * inv_d * inv_b;
        }
        recon = recon * inv_d * inv_b;

        let mut grads = CvaeGrads {
            prior: self.prior_params.zeros_like(),
            encoder: self.encoder_params.zeros_like(),
            decoder: self.decoder_params.zeros_like(),
        };
        let ddec_in = self
            .decoder
            .backward_into(&self.decoder_params, &dec_tape, &dpred, &mut grads.decoder)?;

        let mut kl = T::zero();
        let mut denc = vec![T::zero(); batch * 2 * h];
        let mut dprior = vec![T::zero(); batch * 2 * h];
        for b in 0..batch {
            let (q, p) = (&qs[b], &ps[b]);
            kl += kl_diag_gaussians(q, p)?;
            let dz = &ddec_in[b * (h + d)..b * (h + d) + h];
            let nz = &noise[b * h..(b + 1) * h];
            let eh = &enc_head[b * 2 * h..(b + 1) * 2 * h];
            let ph = &prior_head[b * 2 * h..(b + 1) * 2 * h];
            let de = &mut denc[b * 2 * h..(b + 1) * 2 * h];
            let dp = &mut dprior[b * 2 * h..(b + 1) * 2 * h];
            let s = beta * inv_b;
            for i in 0..h {
                let [gmq, glq, gmp, glp] = kl_grad(q, p, i);
                de[i] = dz[i] + s * gmq;
                let dls_q = dz[i] * q.log_sigma[i].exp() * nz[i] + s * glq;
                de[h + i] = dls_q * clamp_log_sigma_grad(eh[h + i]);
                dp[i] = s * gmp;
                dp[h + i] = s * glp * clamp_log_sigma_grad(ph[h + i]);
            }
        }
        kl = kl * inv_b;
        self.encoder
            .backward_into(&self.encoder_params, &enc_tape, &denc, &mut grads.encoder)?;
        self.prior
            .backward_into(&self.prior_params, &prior_tape, &dprior, &mut grads.prior)?;

        Ok(ElboOutput {
            loss: recon + beta * kl,
            parts: ElboParts {
                recon: recon.f64(),
                kl: kl.f64(),
            },
            grads,
        })
    }

    /// Mean squared reconstruction error of the decoder fed the posterior mean, over
    /// `batch` row-major pairs.
    pub fn reconstruction_mse(&self, m0: &[T], m1: &[T], batch: usize) -> Result<f64> {
        self.check_window("m0", m0, batch)?;
        self.check_window("m1", m1, batch)?;
        let (d, h) = (self.window_len(), self.latent_dim());
        let m1 = &*self.relative(m1, m0, batch);
        let m0 = &*self.relative(m0, m0, batch);
        let enc_in: Vec<T> = (0..batch)
            .flat_map(|b| m0[b * d..(b + 1) * d].iter().chain(&m1[b * d..(b + 1) * d]).copied())
            .collect();
        let enc_head = self.encoder.predict(&self.encoder_params, &enc_in, batch)?;
        let mut dec_in = Vec::with_capacity(batch * (h + d));
        for b in 0..batch {
            dec_in.extend_from_slice(&enc_head[b * 2 * h..b * 2 * h + h]);
            dec_in.extend_from_slice(&m0[b * d..(b + 1) * d]);
        }
        let pred = self.decoder.predict(&self.decoder_params, &dec_in, batch)?;
        let sse: f64 = pred.iter().zip(m1).map(|(a, b)| (*a - *b).f64().powi(2)).sum();
        Ok(sse / (batch * d) as f64)
    }

    /// All parameters in one store under `prior.`, `encoder.` and `decoder.` prefixes.
    pub fn merged_params(&self) -> ParamStore<T> {
        let mut all = ParamStore::new();
        all.merge_prefixed("prior.", &self.prior_params).expect("unique names");
        all.merge_prefixed("encoder.", &self.encoder_params).expect("unique names");
        all.merge_prefixed("decoder.", &self.decoder_params).expect("unique names");
        all
    }

    /// Replaces all parameters from a store laid out like [`merged_params`](Self::merged_params).
    pub fn set_merged_params(&mut self, all: &ParamStore<T>) -> Result<()> {
        let prior = all.extract_prefixed("prior.");
        let encoder = all.extract_prefixed("encoder.");
        let decoder = all.extract_prefixed("decoder.");
        self.prior = Mlp::attach(self.prior.config().clone(), "", &prior)?;
        self.encoder = Mlp::attach(self.encoder.config().clone(), "", &encoder)?;
        self.decoder = Mlp::attach(self.decoder.config().clone(), "", &decoder)?;
        self.prior_params = prior;
        self.encoder_params = encoder;
        self.decoder_params = decoder;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.merged_params(),
            json!({
                "kind": "cvae",
                "W": self.config.window,
                "H": self.config.latent_dim,
                "n_upper": self.n_upper,
                "hidden": self.config.hidden,
                "activation": self.config.activation,
                "kl_weight": self.config.kl_weight,
                "anchored": self.config.anchored,
            }),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta_str("kind") != Some("cvae") {
            return Err(Error::Checkpoint(format!(
                "expected a cvae checkpoint, found kind {:?}",
                ckpt.meta_str("kind")
            )));
        }
        let mut config = CvaeConfig {
            window: ckpt.meta_usize("W")?,
            latent_dim: ckpt.meta_usize("H")?,
            ..CvaeConfig::default()
        };
        if let Some(h) = ckpt.meta.get("hidden") {
            config.hidden = serde_json::from_value(h.clone()).map_err(|e| Error::Parse {
                context: "cvae checkpoint meta.hidden".into(),
                source: e,
            })?;
        }
        if let Some(a) = ckpt.meta.get("activation") {
            config.activation = serde_json::from_value(a.clone()).map_err(|e| Error::Parse {
                context: "cvae checkpoint meta.activation".into(),
                source: e,
            })?;
        }
        if let Some(b) = ckpt.meta.get("kl_weight").and_then(|v| v.as_f64()) {
            config.kl_weight = b;
        }
        if let Some(r) = ckpt.meta.get("anchored").and_then(|v| v.as_bool()) {
            config.anchored = r;
        }
        let n_upper = ckpt.meta_usize("n_upper")?;
        let mut model = CvaeModel::new(config, n_upper, 0)?;
        model.set_merged_params(&ckpt.params.cast())?;
        Ok(model)
    }
}
