//! Gaussian actor with a state-independent log standard deviation, plus a value critic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::gaussian::{clamp_log_sigma, clamp_log_sigma_grad};
use crate::nn::{Activation, Checkpoint, Mlp, MlpConfig, ParamStore, Tape};
use crate::scalar::Real;

pub const LOG_STD: &str = "log_std";
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![256, 256],
            activation: Activation::Elu,
            init_log_std: -0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    pub value: T,
}

/// Forward results for a batch, with tapes for the reverse pass.
#[derive(Debug, Clone)]
pub struct PolicyBatch<T> {
    pub mean: Vec<T>,
    pub value: Vec<T>,
    pub log_std: Vec<T>,
    pub actor_tape: Tape<T>,
    pub critic_tape: Tape<T>,
}

#[derive(Debug, Clone)]
pub struct Policy<T> {
    pub config: PolicyConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Latent width embedded in the observation; zero-filled for the no-prior ablation.
    pub latent_dim: usize,
    pub uses_prior: bool,
    actor: Mlp,
    critic: Mlp,
    log_std_slot: usize,
    pub params: ParamStore<T>,
}

/// `log N(a; mean, exp(log_std)^2)` for a diagonal Gaussian.
pub fn gaussian_log_prob<T: Real>(mean: &[T], log_std: &[T], action: &[T]) -> T {
    let half = T::of(0.5);
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &s), &a)| {
            let z = (a - m) / s.exp();
            -half * z * z - s - T::of(HALF_LN_2PI)
        })
        .sum()
}

pub fn gaussian_entropy<T: Real>(log_std: &[T]) -> T {
    log_std.iter().map(|&s| s + T::of(0.5 + HALF_LN_2PI)).sum()
}

impl<T: Real> Policy<T> {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        latent_dim: usize,
        uses_prior: bool,
        config: PolicyConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mk = |o| {
            MlpConfig::new(obs_dim, o)
                .with_hidden(config.hidden.clone())
                .with_activation(config.activation)
        };
        let actor = Mlp::register(mk(act_dim), "actor.", &mut params, &mut rng)?;
        let critic = Mlp::register(mk(1), "critic.", &mut params, &mut rng)?;
        // Small final actor layer so initial actions stay near the default pose.
        let last = params
            .index_of(&format!("actor.l{}.w", config.hidden.len()))
            .expect("actor output layer");
        params.tensor_mut(last).values.iter_mut().for_each(|w| *w *= T::of(0.01));
        let log_std_slot = params.insert(LOG_STD, &[act_dim], vec![T::of(config.init_log_std); act_dim])?;
        Ok(Policy {
            config,
            obs_dim,
            act_dim,
            latent_dim,
            uses_prior,
            actor,
            critic,
            log_std_slot,
            params,
        })
    }

    fn rebind(&mut self) -> Result<()> {
        self.actor = Mlp::attach(self.actor.config().clone(), "actor.", &self.params)?;
        self.critic = Mlp::attach(self.critic.config().clone(), "critic.", &self.params)?;
        self.log_std_slot = self
            .params
            .index_of(LOG_STD)
            .ok_or_else(|| Error::Checkpoint("missing log_std".into()))?;
        Ok(())
    }

    /// Replaces the parameters with a store of identical layout.
    pub fn set_params(&mut self, params: ParamStore<T>) -> Result<()> {
        self.params.check_layout(&params, "policy parameters")?;
        self.params = params;
        self.rebind()
    }

    pub fn log_std(&self) -> Vec<T> {
        self.params
            .tensor(self.log_std_slot)
            .values
            .iter()
            .map(|&s| clamp_log_sigma(s))
            .collect()
    }

    fn raw_log_std(&self) -> &[T] {
        &self.params.tensor(self.log_std_slot).values
    }

    pub fn log_std_slot(&self) -> usize {
        self.log_std_slot
    }

    fn check_obs(&self, obs: &[T], batch: usize) -> Result<()> {
        if obs.len() != batch * self.obs_dim {
            return Err(Error::shape(format!(
                "policy expects {} x {} observations, got {} values",
                batch,
                self.obs_dim,
                obs.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[T]) -> Result<PolicyOutput<T>> {
        self.check_obs(obs, 1)?;
        let mean = self.actor.predict(&self.params, obs, 1)?;
        let value = self.critic.predict(&self.params, obs, 1)?[0];
        Ok(PolicyOutput {
            mean,
            log_std: self.log_std(),
            value,
        })
    }

    pub fn value(&self, obs: &[T]) -> Result<T> {
        self.check_obs(obs, 1)?;
        Ok(self.critic.predict(&self.params, obs, 1)?[0])
    }

    /// Action means and values for a batch, without recording tapes.
    pub fn predict_batch(&self, obs: &[T], batch: usize) -> Result<(Vec<T>, Vec<T>)> {
        self.check_obs(obs, batch)?;
        Ok((
            self.actor.predict(&self.params, obs, batch)?,
            self.critic.predict(&self.params, obs, batch)?,
        ))
    }

    /// Samples around a given mean; returns the action and its log-probability.
    pub fn sample_around(&self, mean: &[T], log_std: &[T], rng: &mut impl Rng) -> (Vec<T>, T) {
        let a: Vec<T> = mean
            .iter()
            .zip(log_std)
            .map(|(&m, &s)| {
                let e: f64 = StandardNormal.sample(rng);
                m + s.exp() * T::of(e)
            })
            .collect();
        let lp = gaussian_log_prob(mean, log_std, &a);
        (a, lp)
    }

    pub fn forward_batch(&self, obs: &[T], batch: usize) -> Result<PolicyBatch<T>> {
        self.check_obs(obs, batch)?;
        let (mean, actor_tape) = self.actor.forward_batch(&self.params, obs, batch)?;
        let (value, critic_tape) = self.critic.forward_batch(&self.params, obs, batch)?;
        Ok(PolicyBatch {
            mean,
            value,
            log_std: self.log_std(),
            actor_tape,
            critic_tape,
        })
    }

    /// Accumulates parameter gradients given output gradients of a batch forward pass.
    /// `d_log_std` is with respect to the clamped log standard deviation.
    pub fn backward_into(
        &self,
        batch: &PolicyBatch<T>,
        d_mean: &[T],
        d_value: &[T],
        d_log_std: &[T],
        grads: &mut ParamStore<T>,
    ) -> Result<()> {
        self.actor.backward_into(&self.params, &batch.actor_tape, d_mean, grads)?;
        self.critic.backward_into(&self.params, &batch.critic_tape, d_value, grads)?;
        let raw: Vec<T> = self.raw_log_std().to_vec();
        let g = &mut grads.tensor_mut(self.log_std_slot).values;
        for i in 0..self.act_dim {
            g[i] += d_log_std[i] * clamp_log_sigma_grad(raw[i]);
        }
        Ok(())
    }

    /// Samples an action; returns it with its log-probability.
    pub fn sample(&self, out: &PolicyOutput<T>, rng: &mut impl Rng) -> (Vec<T>, T) {
        self.sample_around(&out.mean, &out.log_std, rng)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.params,
            json!({
                "kind": "policy",
                "obs_dim": self.obs_dim,
                "act_dim": self.act_dim,
                "H": self.latent_dim,
                "uses_prior": self.uses_prior,
                "hidden": self.config.hidden,
                "activation": self.config.activation,
            }),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta_str("kind") != Some("policy") {
            return Err(Error::Checkpoint(format!(
                "expected a policy checkpoint, found kind {:?}",
                ckpt.meta_str("kind")
            )));
        }
        let mut config = PolicyConfig::default();
        if let Some(h) = ckpt.meta.get("hidden") {
            config.hidden = serde_json::from_value(h.clone()).map_err(|e| Error::Parse {
                context: "policy checkpoint meta.hidden".into(),
                source: e,
            })?;
        }
        if let Some(a) = ckpt.meta.get("activation") {
            config.activation = serde_json::from_value(a.clone()).map_err(|e| Error::Parse {
                context: "policy checkpoint meta.activation".into(),
                source: e,
            })?;
        }
        let uses_prior = ckpt.meta.get("uses_prior").and_then(|v| v.as_bool()).unwrap_or(true);
        let mut policy = Policy::new(
            ckpt.meta_usize("obs_dim")?,
            ckpt.meta_usize("act_dim")?,
            ckpt.meta_usize("H")?,
            uses_prior,
            config,
            0,
        )?;
        let params: ParamStore<T> = ckpt.params.cast();
        if !policy.params.same_layout(&params) {
            return Err(Error::Compatibility(
                "policy checkpoint tensors do not match its declared dimensions".into(),
            ));
        }
        policy.params = params;
        policy.rebind()?;
        Ok(policy)
    }
}
