//! PPO training loop with per-clip curriculum.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curriculum::CurriculumState;
use super::env::{EnvConfig, EpisodeSetup, LocoEnv, Termination};
use super::policy::{Policy, PolicyConfig};
use super::ppo::{ppo_update, PpoConfig, PpoStats, RolloutBuffer};
use crate::cvae::CvaeModel;
use crate::error::{Error, Result};
use crate::motion::{MotionDataset, RobotModel};
use crate::nn::{AdamConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    /// `env.max_episode_s` is overridden by `ppo.max_episode_s`.
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub alpha_init: f64,
    pub alpha_min: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ppo: PpoConfig::default(),
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            alpha_init: 0.1,
            alpha_min: 0.1,
        }
    }
}

pub const LOG_HEADER: &str = "iter,mean_reward,mean_survival,mean_alpha,policy_loss,value_loss,entropy,clip_frac,approx_kl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: usize,
    /// Mean per-step reward over the iteration's rollout.
    pub mean_reward: f64,
    /// Mean survival fraction of episodes that ended during the iteration.
    pub mean_survival: f64,
    pub mean_alpha: f64,
    pub stats: PpoStats,
}

impl IterLog {
    pub fn csv_row(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.mean_reward,
            self.mean_survival,
            self.mean_alpha,
            s.policy_loss,
            s.value_loss,
            s.entropy,
            s.clip_frac,
            s.approx_kl
        )
    }
}

pub fn log_to_csv(log: &[IterLog]) -> String {
    let mut out = String::with_capacity(64 * (log.len() + 1));
    out.push_str(LOG_HEADER);
    out.push('\n');
    for row in log {
        let _ = writeln!(out, "{}", row.csv_row());
    }
    out
}

pub fn write_log_csv(log: &[IterLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, log_to_csv(log)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct PolicyTraining {
    pub policy: Policy<f64>,
    pub log: Vec<IterLog>,
    pub curriculum: CurriculumState,
}

struct Worker {
    env: LocoEnv,
    rng: ChaCha8Rng,
}

fn sample_setup(env: &LocoEnv, curriculum: &CurriculumState, rng: &mut ChaCha8Rng) -> EpisodeSetup {
    let clip = rng.random_range(0..env.dataset().clips.len());
    let command = env.config().commands.sample(env.robot().base.nominal_height, rng);
    EpisodeSetup {
        clip,
        command,
        speed_factor: 1.0,
        alpha: curriculum.get(&env.dataset().clips[clip].id),
        push: None,
        seed: rng.random(),
    }
}

pub fn train_policy(
    robot: &RobotModel,
    dataset: Arc<MotionDataset>,
    cvae: Option<Arc<CvaeModel<f64>>>,
    config: &TrainConfig,
) -> Result<PolicyTraining> {
    train_policy_with(robot, dataset, cvae, config, |_| {})
}

/// As [`train_policy`], calling `on_iter` after every iteration.
pub fn train_policy_with(
    robot: &RobotModel,
    dataset: Arc<MotionDataset>,
    cvae: Option<Arc<CvaeModel<f64>>>,
    config: &TrainConfig,
    mut on_iter: impl FnMut(&IterLog),
) -> Result<PolicyTraining> {
    let ppo = &config.ppo;
    ppo.validate()?;
    dataset.validate()?;
    let mut env_config = config.env.clone();
    env_config.max_episode_s = ppo.max_episode_s;
    let uses_prior = cvae.is_some();

    let mut curriculum = CurriculumState::new(&dataset, config.alpha_init, config.alpha_min);
    let mut workers = Vec::with_capacity(ppo.n_envs);
    for i in 0..ppo.n_envs {
        let env = LocoEnv::new(robot.clone(), env_config.clone(), dataset.clone(), cvae.clone())?;
        let rng = ChaCha8Rng::seed_from_u64(ppo.seed.wrapping_mul(0x9e37_79b9).wrapping_add(1000 + i as u64));
        workers.push(Worker { env, rng });
    }
    let (obs_dim, act_dim, latent_dim) = {
        let e = &workers[0].env;
        (e.obs_dim(), e.act_dim(), e.latent_dim())
    };
    let mut policy = Policy::new(obs_dim, act_dim, latent_dim, uses_prior, config.policy.clone(), ppo.seed)?;
    let mut optimizer = OptimizerState::new(
        &policy.params,
        AdamConfig {
            learning_rate: ppo.learning_rate,
            ..Default::default()
        },
    );
    let mut update_rng = ChaCha8Rng::seed_from_u64(ppo.seed ^ 0x5050_u64);
    for w in workers.iter_mut() {
        let setup = sample_setup(&w.env, &curriculum, &mut w.rng);
        w.env.reset(&setup)?;
    }

    let h = ppo.horizon;
    let mut log = Vec::with_capacity(ppo.iterations);
    let mut last_survival: Option<f64> = None;
    let mut obs = Vec::with_capacity(obs_dim);
    let mut batch_obs = Vec::with_capacity(ppo.n_envs * obs_dim);
    for iter in 0..ppo.iterations {
        let mut buffer = RolloutBuffer::new(obs_dim, act_dim);
        let mut reward_sum = 0.0;
        let mut ended = Vec::new();
        let n_envs = workers.len();
        let mut seg_obs = vec![Vec::with_capacity(h * obs_dim); n_envs];
        let mut seg_act = vec![Vec::with_capacity(h * act_dim); n_envs];
        let mut seg_lp = vec![Vec::with_capacity(h); n_envs];
        let mut seg_val = vec![Vec::with_capacity(h + 1); n_envs];
        let mut seg_rew = vec![Vec::with_capacity(h); n_envs];
        let mut seg_done = vec![Vec::with_capacity(h); n_envs];
        let log_std = policy.log_std();
        for _ in 0..=h {
            batch_obs.clear();
            for w in workers.iter() {
                w.env.observation_into(&mut obs);
                batch_obs.extend_from_slice(&obs);
            }
            let (means, values) = policy.predict_batch(&batch_obs, n_envs)?;
            for (i, w) in workers.iter_mut().enumerate() {
                // The final pass only supplies bootstrap values.
                seg_val[i].push(values[i]);
                if seg_rew[i].len() == h {
                    continue;
                }
                seg_obs[i].extend_from_slice(&batch_obs[i * obs_dim..(i + 1) * obs_dim]);
                let (action, lp) = policy.sample_around(&means[i * act_dim..(i + 1) * act_dim], &log_std, &mut w.rng);
                let step = w.env.step(&action)?;
                reward_sum += step.reward.total;
                let mut r = step.reward.total;
                if step.termination == Some(Termination::TimeLimit) {
                    // Truncation, not failure: bootstrap through the time limit.
                    w.env.observation_into(&mut obs);
                    r += ppo.gamma * policy.value(&obs)?;
                }
                seg_act[i].extend_from_slice(&action);
                seg_lp[i].push(lp);
                seg_rew[i].push(r);
                seg_done[i].push(step.done);
                if step.done {
                    let survival = w.env.survival_fraction();
                    curriculum.update(w.env.clip_id(), survival);
                    ended.push(survival);
                    let setup = sample_setup(&w.env, &curriculum, &mut w.rng);
                    w.env.reset(&setup)?;
                }
            }
        }
        for i in 0..n_envs {
            buffer.push_segment(
                &seg_obs[i],
                &seg_act[i],
                &seg_lp[i],
                &seg_val[i],
                &seg_rew[i],
                &seg_done[i],
                ppo.gamma,
                ppo.lambda,
            )?;
        }
        let stats = ppo_update(&mut policy, &mut optimizer, &buffer, ppo, &mut update_rng)?;
        let mean_survival = if !ended.is_empty() {
            ended.iter().sum::<f64>() / ended.len() as f64
        } else if let Some(prev) = last_survival {
            prev
        } else {
            workers.iter().map(|w| w.env.survival_fraction()).sum::<f64>() / workers.len() as f64
        };
        last_survival = Some(mean_survival);
        let row = IterLog {
            iter,
            mean_reward: reward_sum / (h * workers.len()) as f64,
            mean_survival,
            mean_alpha: curriculum.mean(),
            stats,
        };
        log::debug!("{}", row.csv_row());
        on_iter(&row);
        log.push(row);
    }
    Ok(PolicyTraining {
        policy,
        log,
        curriculum,
    })
}
