//! Tracking, gait-periodicity and regularization rewards.

use serde::{Deserialize, Serialize};

use super::command::Command;
use crate::sim::SimState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_lin_vel: f64,
    pub w_height: f64,
    pub w_orient: f64,
    pub w_gait: f64,
    pub w_action_rate: f64,
    pub w_joint_acc: f64,
    pub w_torque: f64,
    pub w_alive: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_lin_vel: 1.0,
            w_height: 0.5,
            w_orient: 0.5,
            w_gait: 0.5,
            w_action_rate: -0.01,
            w_joint_acc: -2.5e-7,
            w_torque: -1e-5,
            w_alive: 0.2,
        }
    }
}

impl RewardWeights {
    pub fn is_finite(&self) -> bool {
        [
            self.w_lin_vel,
            self.w_height,
            self.w_orient,
            self.w_gait,
            self.w_action_rate,
            self.w_joint_acc,
            self.w_torque,
            self.w_alive,
        ]
        .iter()
        .all(|w| w.is_finite())
    }
}

/// Weighted reward terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub lin_vel: f64,
    pub height: f64,
    pub orient: f64,
    pub gait: f64,
    pub action_rate: f64,
    pub joint_acc: f64,
    pub torque: f64,
    pub alive: f64,
    pub total: f64,
}

/// Gait schedule: the left foot is in stance for `φ ∈ [0, 0.5)`, the right foot for
/// `φ ∈ [0.5, 1)`; in standing mode both are.
pub fn desired_stance(foot: usize, phase: f64, standing: bool) -> bool {
    if standing {
        return true;
    }
    let first_half = phase.rem_euclid(1.0) < 0.5;
    if foot == 0 {
        first_half
    } else {
        !first_half
    }
}

/// Everything the reward reads besides the weights.
#[derive(Debug, Clone, Copy)]
pub struct RewardInput<'a> {
    pub state: &'a SimState<f64>,
    pub next: &'a SimState<f64>,
    pub command: &'a Command,
    pub action: &'a [f64],
    pub a_prev: &'a [f64],
    pub phase: f64,
    pub standing: bool,
    pub lower_indices: &'a [usize],
    /// Lower-body torques of the final physics step.
    pub lower_torques: &'a [f64],
    pub dt_control: f64,
}

pub fn reward(input: &RewardInput, w: &RewardWeights) -> RewardTerms {
    let next = input.next;
    let cmd = input.command;
    let sq = |x: f64| x * x;
    let lin_vel = w.w_lin_vel * (-sq(cmd.vx - next.base_vel.vx) / 0.25).exp();
    let height = w.w_height * (-sq(cmd.h - next.base.z) / 0.01).exp();
    let orient = w.w_orient * (-sq(cmd.pitch - next.base.pitch) / 0.04).exp();
    let n_feet = next.foot_contact.len().max(1) as f64;
    let matched = next
        .foot_contact
        .iter()
        .enumerate()
        .filter(|&(f, &c)| c == desired_stance(f, input.phase, input.standing))
        .count() as f64;
    let gait = w.w_gait * matched / n_feet;
    let action_rate = w.w_action_rate
        * input
            .action
            .iter()
            .zip(input.a_prev)
            .map(|(a, b)| sq(a - b))
            .sum::<f64>();
    let joint_acc = w.w_joint_acc
        * input
            .lower_indices
            .iter()
            .map(|&j| sq((next.qdot[j] - input.state.qdot[j]) / input.dt_control))
            .sum::<f64>();
    let torque = w.w_torque * input.lower_torques.iter().map(|t| sq(*t)).sum::<f64>();
    let alive = w.w_alive;
    RewardTerms {
        lin_vel,
        height,
        orient,
        gait,
        action_rate,
        joint_acc,
        torque,
        alive,
        total: lin_vel + height + orient + gait + action_rate + joint_acc + torque + alive,
    }
}
