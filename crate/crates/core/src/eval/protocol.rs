//! Multi-trial evaluation and push / playback-speed robustness sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, EpisodeMetrics};
use crate::error::{Error, Result};
use crate::rl::{run_episode, ActionSource, EpisodeSetup, LocoEnv, Policy, PushSchedule};

/// Label written in the `clip_id` column of dataset-level aggregate rows.
pub const AGGREGATE_CLIP: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub n_traj: usize,
    pub seed: u64,
    /// Curriculum blend used during evaluation; 1 plays the clips unmodified.
    pub alpha: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_traj: 5,
            seed: 0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessSpec {
    pub push_vels: Vec<f64>,
    pub speed_factors: Vec<f64>,
    pub push_interval: f64,
    pub trials_per_clip: usize,
}

impl Default for RobustnessSpec {
    fn default() -> Self {
        RobustnessSpec {
            push_vels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            speed_factors: vec![0.5, 1.0, 1.5, 2.0],
            push_interval: 5.0,
            trials_per_clip: 5,
        }
    }
}

impl RobustnessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.push_vels.is_empty() || self.speed_factors.is_empty() {
            return Err(Error::Argument("robustness grids must be non-empty".into()));
        }
        if !(self.push_interval > 0.0) || self.trials_per_clip == 0 {
            return Err(Error::Argument(
                "push interval and trials per clip must be positive".into(),
            ));
        }
        if self.speed_factors.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Argument("speed factors must be positive".into()));
        }
        if self.push_vels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("push velocities must be finite".into()));
        }
        Ok(())
    }
}

/// One report row. `trial = None` marks a mean over trials (per clip, or over the whole
/// dataset when `clip_id` is [`AGGREGATE_CLIP`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub clip_id: String,
    pub trial: Option<usize>,
    pub push_vel: f64,
    pub speed_factor: f64,
    #[serde(flatten)]
    pub metrics: EpisodeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    /// One row per (clip, trial).
    pub episodes: Vec<EvalRow>,
    /// One mean row per clip.
    pub per_clip: Vec<EvalRow>,
    pub aggregate: EvalRow,
}

impl EvalTable {
    /// Episode rows, then per-clip means, then the aggregate.
    pub fn all_rows(&self) -> Vec<EvalRow> {
        let mut rows = self.episodes.clone();
        rows.extend(self.per_clip.iter().cloned());
        rows.push(self.aggregate.clone());
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub episodes: Vec<EvalRow>,
    /// Dataset means per push velocity (speed factor 1), then per speed factor (no push).
    pub curves: Vec<EvalRow>,
}

/// `"pmp"` for a prior-conditioned policy, `"no_prior"` for the ablation.
pub fn method_name(policy: &Policy<f64>) -> &'static str {
    if policy.uses_prior {
        "pmp"
    } else {
        "no_prior"
    }
}

fn episode_seed(base: u64, clip: usize, trial: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ ((clip as u64) << 32)
        ^ (trial as u64).wrapping_mul(0x1000_0001)
}

struct Condition {
    push_vel: f64,
    speed_factor: f64,
}

fn run_condition(
    env: &mut LocoEnv,
    source: ActionSource,
    method: &str,
    cond: &Condition,
    opts: &EvalOptions,
    push_interval: f64,
) -> Result<(Vec<EvalRow>, Vec<EvalRow>)> {
    let mut episodes = Vec::new();
    let mut per_clip = Vec::new();
    let n_clips = env.dataset().clips.len();
    for clip in 0..n_clips {
        let mut metrics = Vec::with_capacity(opts.n_traj);
        for trial in 0..opts.n_traj {
            // Commands depend on (seed, clip, trial) only, so every grid point and
            // method sees the same command sequence.
            let seed = episode_seed(opts.seed, clip, trial);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let command = env.config().commands.sample(env.robot().base.nominal_height, &mut rng);
            let setup = EpisodeSetup {
                clip,
                command,
                speed_factor: cond.speed_factor,
                alpha: opts.alpha,
                push: (cond.push_vel != 0.0).then_some(PushSchedule {
                    vel: cond.push_vel,
                    interval: push_interval,
                }),
                seed,
            };
            let record = run_episode(env, &setup, source)?;
            let m = compute_metrics(&record, env.robot())?;
            episodes.push(EvalRow {
                method: method.to_string(),
                clip_id: record.clip_id.clone(),
                trial: Some(trial),
                push_vel: cond.push_vel,
                speed_factor: cond.speed_factor,
                metrics: m,
            });
            metrics.push(m);
        }
        if let Some(mean) = EpisodeMetrics::mean(&metrics) {
            per_clip.push(EvalRow {
                method: method.to_string(),
                clip_id: env.dataset().clips[clip].id.clone(),
                trial: None,
                push_vel: cond.push_vel,
                speed_factor: cond.speed_factor,
                metrics: mean,
            });
        }
    }
    Ok((episodes, per_clip))
}

fn aggregate_row(method: &str, cond: &Condition, episodes: &[EvalRow]) -> EvalRow {
    let ms: Vec<EpisodeMetrics> = episodes.iter().map(|r| r.metrics).collect();
    EvalRow {
        method: method.to_string(),
        clip_id: AGGREGATE_CLIP.to_string(),
        trial: None,
        push_vel: cond.push_vel,
        speed_factor: cond.speed_factor,
        metrics: EpisodeMetrics::mean(&ms).unwrap_or_default(),
    }
}

/// `n_traj` deterministic episodes per clip with the policy mean action.
pub fn run_eval(
    env: &mut LocoEnv,
    source: ActionSource,
    method: &str,
    opts: &EvalOptions,
) -> Result<EvalTable> {
    if opts.n_traj == 0 {
        return Err(Error::Argument("n_traj must be at least 1".into()));
    }
    let cond = Condition {
        push_vel: 0.0,
        speed_factor: 1.0,
    };
    let (episodes, per_clip) = run_condition(env, source, method, &cond, opts, 1.0)?;
    let aggregate = aggregate_row(method, &cond, &episodes);
    Ok(EvalTable {
        episodes,
        per_clip,
        aggregate,
    })
}

/// Push sweep at unit speed, then speed sweep without pushes; `trials_per_clip`
/// replaces `opts.n_traj`. A zero push velocity means no push.
pub fn robustness_sweep(
    env: &mut LocoEnv,
    source: ActionSource,
    method: &str,
    spec: &RobustnessSpec,
    opts: &EvalOptions,
) -> Result<RobustnessReport> {
    spec.validate()?;
    let opts = EvalOptions {
        n_traj: spec.trials_per_clip,
        ..opts.clone()
    };
    let conditions = spec
        .push_vels
        .iter()
        .map(|&v| Condition {
            push_vel: v,
            speed_factor: 1.0,
        })
        .chain(spec.speed_factors.iter().map(|&s| Condition {
            push_vel: 0.0,
            speed_factor: s,
        }));
    let mut report = RobustnessReport {
        episodes: Vec::new(),
        curves: Vec::new(),
    };
    for cond in conditions {
        let (episodes, _) = run_condition(env, source, method, &cond, &opts, spec.push_interval)?;
        report.curves.push(aggregate_row(method, &cond, &episodes));
        report.episodes.extend(episodes);
    }
    Ok(report)
}
