//! Lower-body locomotion policy: observations, rewards, curriculum, PPO and the
//! training environment.

pub mod command;
pub mod curriculum;
pub mod env;
pub mod gae;
pub mod obs;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod train;

pub use command::{Command, CommandRanges};
pub use curriculum::{curriculum_target, curriculum_target_into, curriculum_update, CurriculumState};
pub use env::{
    run_episode, ActionSource, EnvConfig, EpisodeSetup, LocoEnv, PushSchedule, StepOutcome, Termination,
    TrajectoryRecord, TrajectoryStep,
};
pub use gae::{gae, Advantages};
pub use obs::{build_observation, build_observation_into, gait_clock, observation_len, wrap_angle, ObsScales};
pub use policy::{gaussian_entropy, gaussian_log_prob, Policy, PolicyBatch, PolicyConfig, PolicyOutput};
pub use ppo::{ppo_loss, ppo_update, PpoBatch, PpoConfig, PpoLoss, PpoStats, RolloutBuffer};
pub use reward::{desired_stance, reward, RewardInput, RewardTerms, RewardWeights};
pub use train::{log_to_csv, train_policy, train_policy_with, write_log_csv, IterLog, PolicyTraining, TrainConfig, LOG_HEADER};
