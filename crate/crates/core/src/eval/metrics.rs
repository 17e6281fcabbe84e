//! Per-episode tracking and stability metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::RobotModel;
use crate::rl::TrajectoryRecord;
use crate::sim::forward_kinematics;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    #[serde(rename = "E_jpe_upper")]
    pub e_jpe_upper: f64,
    #[serde(rename = "E_kpe_upper")]
    pub e_kpe_upper: f64,
    #[serde(rename = "E_acc_upper")]
    pub e_acc_upper: f64,
    #[serde(rename = "E_action_upper")]
    pub e_action_upper: f64,
    #[serde(rename = "E_vel")]
    pub e_vel: f64,
    #[serde(rename = "E_ang")]
    pub e_ang: f64,
    #[serde(rename = "E_acc_lower")]
    pub e_acc_lower: f64,
    #[serde(rename = "E_action_lower")]
    pub e_action_lower: f64,
    #[serde(rename = "E_g")]
    pub e_g: f64,
    #[serde(rename = "survival")]
    pub survival_fraction: f64,
}

impl EpisodeMetrics {
    pub const FIELDS: [&'static str; 10] = [
        "E_jpe_upper",
        "E_kpe_upper",
        "E_acc_upper",
        "E_action_upper",
        "E_vel",
        "E_ang",
        "E_acc_lower",
        "E_action_lower",
        "E_g",
        "survival",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.e_jpe_upper,
            self.e_kpe_upper,
            self.e_acc_upper,
            self.e_action_upper,
            self.e_vel,
            self.e_ang,
            self.e_acc_lower,
            self.e_action_lower,
            self.e_g,
            self.survival_fraction,
        ]
    }

    pub fn from_values(v: [f64; 10]) -> Self {
        EpisodeMetrics {
            e_jpe_upper: v[0],
            e_kpe_upper: v[1],
            e_acc_upper: v[2],
            e_action_upper: v[3],
            e_vel: v[4],
            e_ang: v[5],
            e_acc_lower: v[6],
            e_action_lower: v[7],
            e_g: v[8],
            survival_fraction: v[9],
        }
    }

    /// Field-wise mean; `None` for an empty slice.
    pub fn mean(items: &[EpisodeMetrics]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let mut acc = [0.0; 10];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        let n = items.len() as f64;
        Some(Self::from_values(acc.map(|a| a / n)))
    }
}

fn mean_of(iter: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = iter.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean over consecutive pairs of `‖x_t - x_{t-1}‖₁ / n`.
fn mean_abs_rate<'a>(seq: impl Iterator<Item = &'a [f64]>, n: f64) -> f64 {
    let seq: Vec<&[f64]> = seq.collect();
    mean_of(seq.windows(2).map(|w| {
        w[1].iter().zip(w[0]).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }))
}

/// Metrics of one recorded episode. Accelerations are central differences of the
/// recorded joint velocities at the control rate.
pub fn compute_metrics(record: &TrajectoryRecord, robot: &RobotModel) -> Result<EpisodeMetrics> {
    let steps = &record.steps;
    if steps.len() < 3 {
        return Err(Error::Argument(format!(
            "metrics need at least 3 control steps, trajectory has {}",
            steps.len()
        )));
    }
    let upper = robot.upper_indices();
    let lower = robot.lower_indices();
    let n_up = upper.len() as f64;
    let n_low = lower.len() as f64;
    let dt = record.dt_control;

    let e_jpe_upper = mean_of(steps.iter().map(|s| {
        upper
            .iter()
            .zip(&s.upper_target)
            .map(|(&j, t)| (t - s.q[j]).abs())
            .sum::<f64>()
            / n_up
    }));

    let upper_kp: Vec<usize> = robot
        .keypoints
        .iter()
        .enumerate()
        .filter(|(_, k)| robot.keypoint_is_upper(k))
        .map(|(i, _)| i)
        .collect();
    let e_kpe_upper = if upper_kp.is_empty() {
        0.0
    } else {
        let mut q_target = Vec::with_capacity(robot.n_joints());
        mean_of(steps.iter().map(|s| {
            q_target.clear();
            q_target.extend_from_slice(&s.q);
            for (&j, &t) in upper.iter().zip(&s.upper_target) {
                q_target[j] = t;
            }
            let actual = forward_kinematics(robot, &s.base, &s.q);
            let target = forward_kinematics(robot, &s.base, &q_target);
            upper_kp
                .iter()
                .map(|&k| ((actual[k][0] - target[k][0]).powi(2) + (actual[k][1] - target[k][1]).powi(2)).sqrt())
                .sum::<f64>()
                / upper_kp.len() as f64
        }))
    };

    let acc = |joints: &[usize]| {
        let n = joints.len().max(1) as f64;
        mean_of(steps.windows(3).map(|w| {
            joints
                .iter()
                .map(|&j| ((w[2].qdot[j] - w[0].qdot[j]) / (2.0 * dt)).abs())
                .sum::<f64>()
                / n
        }))
    };
    Ok(EpisodeMetrics {
        e_jpe_upper,
        e_kpe_upper,
        e_acc_upper: acc(&upper),
        e_action_upper: mean_abs_rate(steps.iter().map(|s| s.upper_target.as_slice()), n_up),
        e_vel: mean_of(steps.iter().map(|s| (s.command.vx - s.base_vel.vx).abs())),
        e_ang: mean_of(steps.iter().map(|s| s.base_vel.pitch_rate.abs())),
        e_acc_lower: acc(&lower),
        e_action_lower: mean_abs_rate(steps.iter().map(|s| s.action.as_slice()), n_low),
        e_g: mean_of(steps.iter().map(|s| s.base.pitch.sin().abs())),
        survival_fraction: record.survival_fraction.clamp(0.0, 1.0),
    })
}
