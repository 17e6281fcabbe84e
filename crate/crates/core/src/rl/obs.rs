//! Observation layout shared by training, evaluation and the teleop server.
//!
//! Order: `q` (all joints, wrapped), `qdot`, pitch rate, projected gravity (2), previous
//! action, gait clock `(sin 2πφ, cos 2πφ)`, command `(vx, h, pitch)`, motion latent.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use super::command::Command;
use crate::sim::{projected_gravity, SimState};

/// Multipliers applied to velocity entries; positions, gravity, clock, command and
/// latent enter unscaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsScales {
    pub qdot: f64,
    pub pitch_rate: f64,
}

impl Default for ObsScales {
    fn default() -> Self {
        ObsScales {
            qdot: 0.1,
            pitch_rate: 0.25,
        }
    }
}

/// `2 (n_lower + n_upper) + 1 + 2 + n_lower + 2 + 3 + H`.
pub fn observation_len(n_lower: usize, n_upper: usize, latent_dim: usize) -> usize {
    2 * (n_lower + n_upper) + 1 + 2 + n_lower + 2 + 3 + latent_dim
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

pub fn gait_clock(phase: f64) -> [f64; 2] {
    let (s, c) = (TAU * phase).sin_cos();
    [s, c]
}

/// Appends the observation to `out` (which is cleared first).
pub fn build_observation_into(
    state: &SimState<f64>,
    command: &Command,
    phase: f64,
    z: &[f64],
    a_prev: &[f64],
    scales: &ObsScales,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.extend(state.q.iter().map(|&q| wrap_angle(q)));
    out.extend(state.qdot.iter().map(|&v| v * scales.qdot));
    out.push(state.base_vel.pitch_rate * scales.pitch_rate);
    out.extend_from_slice(&projected_gravity(state.base.pitch));
    out.extend_from_slice(a_prev);
    out.extend_from_slice(&gait_clock(phase));
    out.extend_from_slice(&command.as_array());
    out.extend_from_slice(z);
}

pub fn build_observation(
    state: &SimState<f64>,
    command: &Command,
    phase: f64,
    z: &[f64],
    a_prev: &[f64],
    scales: &ObsScales,
) -> Vec<f64> {
    let mut out = Vec::new();
    build_observation_into(state, command, phase, z, a_prev, scales, &mut out);
    out
}
