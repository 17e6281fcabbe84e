//! The decoupled locomotion environment: open-loop PD upper body driven by motion clips,
//! lower body driven by the policy, motion prior latent in the observation.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::command::{Command, CommandRanges};
use super::curriculum::curriculum_target_into;
use super::obs::{build_observation_into, observation_len, ObsScales};
use super::policy::Policy;
use super::reward::{reward, RewardInput, RewardTerms, RewardWeights};
use crate::cvae::{pmp_latent, pmp_latent_sample, CvaeModel, LatentMode, MotionRing};
use crate::error::{Error, Result};
use crate::motion::{upper_target_into, MotionDataset, RobotModel};
use crate::sim::{apply_push, BasePose, BaseVel, ContactForce, SimConfig, SimState, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub obs_scales: ObsScales,
    pub reward: RewardWeights,
    pub commands: CommandRanges,
    /// Lower-body targets are `q0_lower + action_scale * clip(a, ±action_clip)`.
    pub action_scale: f64,
    pub action_clip: f64,
    pub gait_period: f64,
    /// Commands with `|vx|` below this run in standing mode.
    pub standing_vx: f64,
    pub max_episode_s: f64,
    pub fall_height_frac: f64,
    pub max_pitch: f64,
    pub latent_mode: LatentMode,
    /// Latent width used when no motion prior is loaded.
    pub latent_dim: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            sim: SimConfig::default(),
            obs_scales: ObsScales::default(),
            reward: RewardWeights::default(),
            commands: CommandRanges::default(),
            action_scale: 0.5,
            action_clip: 3.0,
            gait_period: 0.8,
            standing_vx: 0.1,
            max_episode_s: 20.0,
            fall_height_frac: 0.5,
            max_pitch: 1.0,
            latent_mode: LatentMode::Mean,
            latent_dim: 64,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, robot: &RobotModel) -> Result<()> {
        self.sim.validate(robot)?;
        if !self.reward.is_finite() {
            return Err(Error::Argument("reward weights must be finite".into()));
        }
        if !(self.gait_period > 0.0) || !(self.max_episode_s > 0.0) || !(self.action_clip > 0.0) {
            return Err(Error::Argument(
                "gait_period, max_episode_s and action_clip must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Periodic pushes: `apply_push(vel)` at every multiple of `interval` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushSchedule {
    pub vel: f64,
    pub interval: f64,
}

/// Everything fixed at episode start.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSetup {
    pub clip: usize,
    pub command: Command,
    pub speed_factor: f64,
    pub alpha: f64,
    pub push: Option<PushSchedule>,
    /// Seeds latent sampling and any action noise.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TimeLimit,
    Fell,
    Pitch,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: RewardTerms,
    pub done: bool,
    /// Set when the episode ended; `TimeLimit` means truncation rather than failure.
    pub termination: Option<Termination>,
}

/// One control step: the executed targets and action, and the state they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub time: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub upper_target: Vec<f64>,
    pub action: Vec<f64>,
    pub base: BasePose<f64>,
    pub base_vel: BaseVel<f64>,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub clip_id: String,
    pub speed_factor: f64,
    pub alpha: f64,
    pub dt_control: f64,
    pub steps: Vec<TrajectoryStep>,
    pub push_times: Vec<f64>,
    pub total_reward: f64,
    pub survival_fraction: f64,
    pub termination: Termination,
}

pub struct LocoEnv {
    robot: RobotModel,
    sim: Simulator<f64>,
    config: EnvConfig,
    dataset: Arc<MotionDataset>,
    cvae: Option<Arc<CvaeModel<f64>>>,
    latent_dim: usize,
    q0_upper: Vec<f64>,
    q0_lower: Vec<f64>,
    max_steps: usize,

    state: SimState<f64>,
    ring: MotionRing,
    clip: usize,
    clip_time: f64,
    command: Command,
    speed_factor: f64,
    alpha: f64,
    push: Option<PushSchedule>,
    next_push: f64,
    phase: f64,
    a_prev: Vec<f64>,
    upper_target: Vec<f64>,
    z: Vec<f64>,
    steps: usize,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
}

impl LocoEnv {
    pub fn new(
        robot: RobotModel,
        config: EnvConfig,
        dataset: Arc<MotionDataset>,
        cvae: Option<Arc<CvaeModel<f64>>>,
    ) -> Result<Self> {
        config.validate(&robot)?;
        if dataset.clips.is_empty() {
            return Err(Error::Dataset("the environment needs at least one clip".into()));
        }
        let n_upper = robot.n_upper();
        if dataset.n_upper() != n_upper {
            return Err(Error::Compatibility(format!(
                "dataset has {} upper joints, robot has {}",
                dataset.n_upper(),
                n_upper
            )));
        }
        let latent_dim = match &cvae {
            Some(m) if m.n_upper != n_upper => {
                return Err(Error::Compatibility(format!(
                    "motion prior was trained on {} upper joints, robot has {}",
                    m.n_upper, n_upper
                )))
            }
            Some(m) => m.latent_dim(),
            None => config.latent_dim,
        };
        let window = cvae.as_ref().map_or(1, |m| m.config.window);
        let sim = Simulator::new(&robot, config.sim.clone())?;
        let state = sim.initial_state();
        let q0_upper = robot.q0_upper();
        let q0_lower = robot.q0_lower();
        let max_steps = (config.max_episode_s / config.sim.dt_control()).round().max(1.0) as usize;
        let n_lower = q0_lower.len();
        let mut env = LocoEnv {
            sim,
            config,
            dataset,
            cvae,
            latent_dim,
            ring: MotionRing::filled(window, &q0_upper),
            upper_target: q0_upper.clone(),
            q0_upper,
            q0_lower,
            max_steps,
            state,
            clip: 0,
            clip_time: 0.0,
            command: Command::standing(&robot),
            speed_factor: 1.0,
            alpha: 1.0,
            push: None,
            next_push: f64::INFINITY,
            phase: 0.0,
            a_prev: vec![0.0; n_lower],
            z: vec![0.0; latent_dim],
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            scratch: Vec::new(),
            robot,
        };
        env.refresh_latent()?;
        Ok(env)
    }

    pub fn robot(&self) -> &RobotModel {
        &self.robot
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn dataset(&self) -> &MotionDataset {
        &self.dataset
    }

    pub fn has_prior(&self) -> bool {
        self.cvae.is_some()
    }

    pub fn obs_dim(&self) -> usize {
        observation_len(self.q0_lower.len(), self.q0_upper.len(), self.latent_dim)
    }

    pub fn act_dim(&self) -> usize {
        self.q0_lower.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn dt_control(&self) -> f64 {
        self.config.sim.dt_control()
    }

    pub fn state(&self) -> &SimState<f64> {
        &self.state
    }

    pub fn command(&self) -> Command {
        self.command
    }

    pub fn clip_index(&self) -> usize {
        self.clip
    }

    pub fn clip_id(&self) -> &str {
        &self.dataset.clips[self.clip].id
    }

    pub fn speed_factor(&self) -> f64 {
        self.speed_factor
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// The curriculum-blended upper target that the next step will execute.
    pub fn upper_target(&self) -> &[f64] {
        &self.upper_target
    }

    pub fn latent(&self) -> &[f64] {
        &self.z
    }

    /// Ground contacts active during the last control step.
    pub fn contacts(&self) -> &[ContactForce] {
        self.sim.last_contacts()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn survival_fraction(&self) -> f64 {
        (self.steps as f64 / self.max_steps as f64).min(1.0)
    }

    pub fn standing(&self) -> bool {
        self.command.vx.abs() < self.config.standing_vx
    }

    /// Checks a policy's dimensions against this environment.
    pub fn check_policy(&self, policy: &Policy<f64>) -> Result<()> {
        if policy.obs_dim != self.obs_dim() || policy.act_dim != self.act_dim() {
            return Err(Error::Compatibility(format!(
                "policy expects obs {} / act {}, environment provides obs {} / act {}",
                policy.obs_dim,
                policy.act_dim,
                self.obs_dim(),
                self.act_dim()
            )));
        }
        if policy.uses_prior != self.has_prior() {
            return Err(Error::Compatibility(format!(
                "policy was trained {} a motion prior but the environment runs {} one",
                if policy.uses_prior { "with" } else { "without" },
                if self.has_prior() { "with" } else { "without" }
            )));
        }
        Ok(())
    }

    pub fn reset(&mut self, setup: &EpisodeSetup) -> Result<()> {
        if setup.clip >= self.dataset.clips.len() {
            return Err(Error::Argument(format!(
                "clip index {} out of range ({} clips)",
                setup.clip,
                self.dataset.clips.len()
            )));
        }
        if !(setup.speed_factor > 0.0 && setup.speed_factor.is_finite()) {
            return Err(Error::Argument(format!(
                "speed factor must be positive, got {}",
                setup.speed_factor
            )));
        }
        self.state = self.sim.initial_state();
        self.clip = setup.clip;
        self.clip_time = 0.0;
        self.command = setup.command;
        self.speed_factor = setup.speed_factor;
        self.alpha = setup.alpha.clamp(0.0, 1.0);
        self.push = setup.push.filter(|p| p.interval > 0.0 && p.vel != 0.0);
        self.next_push = self.push.map_or(f64::INFINITY, |p| p.interval);
        self.phase = 0.0;
        self.a_prev.iter_mut().for_each(|a| *a = 0.0);
        self.steps = 0;
        self.rng = ChaCha8Rng::seed_from_u64(setup.seed);
        self.compute_upper_target();
        self.ring.reset(&self.upper_target);
        self.refresh_latent()
    }

    /// Switches the clip mid-episode; its playback restarts from frame zero.
    pub fn select_clip(&mut self, clip: usize, speed_factor: f64) -> Result<()> {
        if clip >= self.dataset.clips.len() || !(speed_factor > 0.0 && speed_factor.is_finite()) {
            return Err(Error::Argument(format!(
                "invalid clip selection {clip} at speed {speed_factor}"
            )));
        }
        self.clip = clip;
        self.speed_factor = speed_factor;
        self.clip_time = 0.0;
        self.compute_upper_target();
        Ok(())
    }

    /// Sets the command after clamping it into the training ranges; returns the clamped value.
    pub fn set_command(&mut self, command: Command) -> Command {
        self.command = self.config.commands.clamp(command, self.robot.base.nominal_height);
        self.command
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha.clamp(0.0, 1.0);
        self.compute_upper_target();
    }

    pub fn push_now(&mut self, vel: f64) {
        apply_push(&mut self.state, vel);
    }

    fn compute_upper_target(&mut self) {
        let clip = &self.dataset.clips[self.clip];
        self.scratch.resize(self.q0_upper.len(), 0.0);
        upper_target_into(clip, self.clip_time, self.speed_factor, &mut self.scratch);
        curriculum_target_into(&self.q0_upper, &self.scratch, self.alpha, &mut self.upper_target);
    }

    fn refresh_latent(&mut self) -> Result<()> {
        let Some(model) = &self.cvae else {
            return Ok(());
        };
        self.z = match self.config.latent_mode {
            LatentMode::Mean => pmp_latent(model, &self.ring)?,
            LatentMode::Sample => {
                let noise: Vec<f64> = (0..self.latent_dim)
                    .map(|_| StandardNormal.sample(&mut self.rng))
                    .collect();
                pmp_latent_sample(model, &self.ring, &noise)?
            }
        };
        Ok(())
    }

    pub fn observation_into(&self, out: &mut Vec<f64>) {
        build_observation_into(
            &self.state,
            &self.command,
            self.phase,
            &self.z,
            &self.a_prev,
            &self.config.obs_scales,
            out,
        );
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.obs_dim());
        self.observation_into(&mut out);
        out
    }

    /// Runs one control step with a raw policy action.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let n_lower = self.q0_lower.len();
        if action.len() != n_lower {
            return Err(Error::shape(format!(
                "expected {} actions, got {}",
                n_lower,
                action.len()
            )));
        }
        if self.state.time + 1e-9 >= self.next_push {
            if let Some(p) = self.push {
                apply_push(&mut self.state, p.vel);
                self.next_push += p.interval;
            }
        }
        let clip = self.config.action_clip;
        let a: Vec<f64> = action.iter().map(|x| x.clamp(-clip, clip)).collect();
        let targets: Vec<f64> = self
            .q0_lower
            .iter()
            .zip(&a)
            .map(|(q0, x)| q0 + self.config.action_scale * x)
            .collect();
        let prev = self.state.clone();
        let stepped = self.sim.control_step(&mut self.state, &targets, &self.upper_target);
        self.steps += 1;
        let standing = self.standing();
        let diverged = match stepped {
            Ok(()) => !self.state.is_finite(),
            Err(Error::Divergence { .. }) => true,
            Err(e) => return Err(e),
        };
        let terms = if diverged {
            RewardTerms::default()
        } else {
            let lower_torques: Vec<f64> = self
                .sim
                .lower_indices()
                .iter()
                .map(|&j| self.sim.last_torques()[j])
                .collect();
            reward(
                &RewardInput {
                    state: &prev,
                    next: &self.state,
                    command: &self.command,
                    action: &a,
                    a_prev: &self.a_prev,
                    phase: self.phase,
                    standing,
                    lower_indices: self.sim.lower_indices(),
                    lower_torques: &lower_torques,
                    dt_control: self.dt_control(),
                },
                &self.config.reward,
            )
        };
        self.a_prev = a;
        if !standing {
            self.phase = (self.phase + self.dt_control() / self.config.gait_period).rem_euclid(1.0);
        }
        self.ring.push(&self.upper_target);
        self.clip_time += self.dt_control();
        self.compute_upper_target();
        let termination = if diverged {
            Some(Termination::Diverged)
        } else if self.state.base.z < self.config.fall_height_frac * self.robot.base.nominal_height {
            Some(Termination::Fell)
        } else if self.state.base.pitch.abs() > self.config.max_pitch {
            Some(Termination::Pitch)
        } else if self.steps >= self.max_steps {
            Some(Termination::TimeLimit)
        } else {
            None
        };
        if !diverged {
            self.refresh_latent()?;
        }
        Ok(StepOutcome {
            reward: terms,
            done: termination.is_some(),
            termination,
        })
    }
}

/// Where episode actions come from.
#[derive(Debug, Clone, Copy)]
pub enum ActionSource<'a> {
    /// Deterministic policy mean.
    PolicyMean(&'a Policy<f64>),
    /// Sampled from the policy distribution.
    PolicySample(&'a Policy<f64>),
    /// Lower body held at its default pose.
    Zero,
    /// Independent Gaussian actions of the given standard deviation.
    Noise(f64),
}

/// Runs one episode to termination and records it.
pub fn run_episode(env: &mut LocoEnv, setup: &EpisodeSetup, source: ActionSource) -> Result<TrajectoryRecord> {
    if let ActionSource::PolicyMean(p) | ActionSource::PolicySample(p) = source {
        env.check_policy(p)?;
    }
    env.reset(setup)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0xac71_0a5e);
    let mut obs = Vec::with_capacity(env.obs_dim());
    let mut steps = Vec::with_capacity(env.max_steps());
    let mut push_times = Vec::new();
    let mut total_reward = 0.0;
    let n = env.act_dim();
    loop {
        let action = match source {
            ActionSource::PolicyMean(p) => {
                env.observation_into(&mut obs);
                p.forward(&obs)?.mean
            }
            ActionSource::PolicySample(p) => {
                env.observation_into(&mut obs);
                let out = p.forward(&obs)?;
                p.sample(&out, &mut rng).0
            }
            ActionSource::Zero => vec![0.0; n],
            ActionSource::Noise(std) => (0..n)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>(),
        };
        let executed_target = env.upper_target().to_vec();
        let pushing = env.push.is_some() && env.state.time + 1e-9 >= env.next_push;
        if pushing {
            push_times.push(env.state.time);
        }
        let out = env.step(&action)?;
        total_reward += out.reward.total;
        if out.termination != Some(Termination::Diverged) {
            let s = env.state();
            steps.push(TrajectoryStep {
                time: s.time,
                q: s.q.clone(),
                qdot: s.qdot.clone(),
                upper_target: executed_target,
                action: env.a_prev.clone(),
                base: s.base,
                base_vel: s.base_vel,
                command: env.command,
            });
        }
        if let Some(t) = out.termination {
            return Ok(TrajectoryRecord {
                clip_id: env.clip_id().to_string(),
                speed_factor: env.speed_factor,
                alpha: env.alpha,
                dt_control: env.dt_control(),
                steps,
                push_times,
                total_reward,
                survival_fraction: env.survival_fraction(),
                termination: t,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{generate_synthetic_dataset, SynthSpec};

    fn env() -> LocoEnv {
        let robot = RobotModel::planar_h1();
        let spec = SynthSpec {
            n_clips: 2,
            frames_per_clip: 120,
            ..Default::default()
        };
        let ds = generate_synthetic_dataset(&spec, 0, &robot);
        let config = EnvConfig {
            max_episode_s: 1.0,
            ..Default::default()
        };
        LocoEnv::new(robot, config, Arc::new(ds), None).unwrap()
    }

    fn setup(robot: &RobotModel) -> EpisodeSetup {
        EpisodeSetup {
            clip: 1,
            command: Command::standing(robot),
            speed_factor: 1.0,
            alpha: 0.5,
            push: None,
            seed: 4,
        }
    }

    #[test]
    fn dimensions_without_prior() {
        let e = env();
        assert_eq!(e.obs_dim(), 98);
        assert_eq!(e.observation().len(), 98);
        assert_eq!(e.act_dim(), 6);
    }

    #[test]
    fn episodes_are_deterministic() {
        let mut e = env();
        let s = setup(e.robot());
        let a = run_episode(&mut e, &s, ActionSource::Noise(0.3)).unwrap();
        let b = run_episode(&mut e, &s, ActionSource::Noise(0.3)).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.survival_fraction));
    }

    #[test]
    fn pushes_follow_the_schedule() {
        let mut e = env();
        let mut s = setup(e.robot());
        s.push = Some(PushSchedule { vel: 0.2, interval: 0.3 });
        let r = run_episode(&mut e, &s, ActionSource::Zero).unwrap();
        assert_eq!(r.termination, Termination::TimeLimit);
        let expect = [0.3, 0.6, 0.9];
        assert_eq!(r.push_times.len(), 3);
        for (t, e) in r.push_times.iter().zip(expect) {
            assert!((t - e).abs() < 1e-6, "{t} vs {e}");
        }
    }

    #[test]
    fn command_is_clamped() {
        let mut e = env();
        let c = e.set_command(Command { vx: 9.0, h: 0.0, pitch: 0.0 });
        assert_eq!(c.vx, 1.2);
        assert!((c.h - 0.85 * e.robot().base.nominal_height).abs() < 1e-12);
    }
}
