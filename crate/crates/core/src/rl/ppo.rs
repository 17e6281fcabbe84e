//! Clipped-surrogate PPO loss, its analytic gradient, and the minibatched update.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gae::gae;
use super::policy::{gaussian_entropy, gaussian_log_prob, Policy};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, OptimizerState, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    /// Control steps collected per env per iteration.
    pub horizon: usize,
    pub n_envs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub max_episode_s: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            horizon: 48,
            n_envs: 16,
            entropy_coef: 0.005,
            value_coef: 1.0,
            learning_rate: 3e-4,
            max_grad_norm: 1.0,
            max_episode_s: 20.0,
            iterations: 200,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Argument(format!(
                "gamma and lambda must lie in (0, 1], got {} and {}",
                self.gamma, self.lambda
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Argument(format!("clip must be positive, got {}", self.clip)));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 || self.n_envs == 0 {
            return Err(Error::Argument(
                "epochs, minibatches, horizon and n_envs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.max_episode_s > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Argument(
                "learning_rate, max_grad_norm and max_episode_s must be positive".into(),
            ));
        }
        if !self.entropy_coef.is_finite() || !self.value_coef.is_finite() {
            return Err(Error::Argument("loss coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Flat on-policy samples with precomputed advantages and returns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        RolloutBuffer {
            obs_dim,
            act_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Appends one env's contiguous segment. `values` carries the bootstrap value
    /// after the last step.
    #[allow(clippy::too_many_arguments)]
    pub fn push_segment(
        &mut self,
        obs: &[f64],
        actions: &[f64],
        log_probs: &[f64],
        values: &[f64],
        rewards: &[f64],
        dones: &[bool],
        gamma: f64,
        lambda: f64,
    ) -> Result<()> {
        let t = rewards.len();
        if obs.len() != t * self.obs_dim || actions.len() != t * self.act_dim || log_probs.len() != t {
            return Err(Error::shape(format!(
                "rollout segment of {t} steps has {} obs values, {} action values and {} log-probs",
                obs.len(),
                actions.len(),
                log_probs.len()
            )));
        }
        let adv = gae(rewards, values, dones, gamma, lambda)?;
        self.obs.extend_from_slice(obs);
        self.actions.extend_from_slice(actions);
        self.log_probs.extend_from_slice(log_probs);
        self.advantages.extend(adv.advantages);
        self.returns.extend(adv.returns);
        Ok(())
    }
}

/// A minibatch view; advantages are used as given (normalization happens upstream).
#[derive(Debug, Clone, Copy)]
pub struct PpoBatch<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [f64],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

impl PpoBatch<'_> {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone)]
pub struct PpoLoss {
    /// `policy_loss + value_coef * value_loss - entropy_coef * entropy`.
    pub loss: f64,
    pub stats: PpoStats,
    pub grads: ParamStore<f64>,
}

/// Loss and gradient with respect to every policy parameter.
pub fn ppo_loss(policy: &Policy<f64>, batch: &PpoBatch, config: &PpoConfig) -> Result<PpoLoss> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Argument("ppo_loss on an empty batch".into()));
    }
    let ad = policy.act_dim;
    if batch.actions.len() != n * ad || batch.advantages.len() != n || batch.returns.len() != n {
        return Err(Error::shape("ppo batch fields disagree in length"));
    }
    let fwd = policy.forward_batch(batch.obs, n)?;
    let log_std = &fwd.log_std;
    let inv_var: Vec<f64> = log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let nf = n as f64;
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);

    let mut d_mean = vec![0.0; n * ad];
    let mut d_value = vec![0.0; n];
    let mut d_log_std = vec![0.0; ad];
    let mut stats = PpoStats::default();

    for i in 0..n {
        let m = &fwd.mean[i * ad..(i + 1) * ad];
        let a = &batch.actions[i * ad..(i + 1) * ad];
        let lp = gaussian_log_prob(m, log_std, a);
        let log_ratio = lp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(lo, hi) * adv;
        stats.policy_loss -= surr1.min(surr2) / nf;
        if ratio < lo || ratio > hi {
            stats.clip_frac += 1.0 / nf;
        }
        stats.approx_kl += (ratio - 1.0 - log_ratio) / nf;
        // The min picks the unclipped branch unless clipping is active and lowers the value.
        let unclipped = surr1 <= surr2 || (lo..=hi).contains(&ratio);
        if unclipped {
            let dlp = -surr1 / nf;
            for k in 0..ad {
                let diff = a[k] - m[k];
                d_mean[i * ad + k] = dlp * diff * inv_var[k];
                d_log_std[k] += dlp * (diff * diff * inv_var[k] - 1.0);
            }
        }
        let err = fwd.value[i] - batch.returns[i];
        stats.value_loss += err * err / nf;
        d_value[i] = config.value_coef * 2.0 * err / nf;
    }
    stats.entropy = gaussian_entropy(log_std);
    for d in d_log_std.iter_mut() {
        *d -= config.entropy_coef;
    }
    let loss = stats.policy_loss + config.value_coef * stats.value_loss - config.entropy_coef * stats.entropy;
    let mut grads = policy.params.zeros_like();
    policy.backward_into(&fwd, &d_mean, &d_value, &d_log_std, &mut grads)?;
    Ok(PpoLoss { loss, stats, grads })
}

/// Runs `epochs` passes of shuffled minibatch Adam steps; returns stats averaged over steps.
pub fn ppo_update(
    policy: &mut Policy<f64>,
    optimizer: &mut OptimizerState<f64>,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<PpoStats> {
    let n = buffer.len();
    if n == 0 {
        return Err(Error::Argument("ppo_update on an empty rollout buffer".into()));
    }
    let mean = buffer.advantages.iter().sum::<f64>() / n as f64;
    let var = buffer.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt() + 1e-8;
    let adv_norm: Vec<f64> = buffer.advantages.iter().map(|a| (a - mean) / std).collect();

    let mb = n.div_ceil(config.minibatches.min(n));
    let (od, ad) = (buffer.obs_dim, buffer.act_dim);
    let mut order: Vec<usize> = (0..n).collect();
    let mut totals = PpoStats::default();
    let mut steps = 0usize;
    let (mut obs, mut act, mut olp, mut adv, mut ret) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            obs.clear();
            act.clear();
            olp.clear();
            adv.clear();
            ret.clear();
            for &i in chunk {
                obs.extend_from_slice(&buffer.obs[i * od..(i + 1) * od]);
                act.extend_from_slice(&buffer.actions[i * ad..(i + 1) * ad]);
                olp.push(buffer.log_probs[i]);
                adv.push(adv_norm[i]);
                ret.push(buffer.returns[i]);
            }
            let batch = PpoBatch {
                obs: &obs,
                actions: &act,
                old_log_probs: &olp,
                advantages: &adv,
                returns: &ret,
            };
            let mut out = ppo_loss(policy, &batch, config)?;
            if !out.loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite PPO loss (policy {}, value {})",
                    out.stats.policy_loss, out.stats.value_loss
                )));
            }
            clip_grad_norm(&mut out.grads, config.max_grad_norm);
            optimizer.step(&mut policy.params, &out.grads)?;
            totals.policy_loss += out.stats.policy_loss;
            totals.value_loss += out.stats.value_loss;
            totals.entropy += out.stats.entropy;
            totals.clip_frac += out.stats.clip_frac;
            totals.approx_kl += out.stats.approx_kl;
            steps += 1;
        }
    }
    let s = steps as f64;
    Ok(PpoStats {
        policy_loss: totals.policy_loss / s,
        value_loss: totals.value_loss / s,
        entropy: totals.entropy / s,
        clip_frac: totals.clip_frac / s,
        approx_kl: totals.approx_kl / s,
    })
}
