//! Planar locomotion commands and their sampling ranges.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::motion::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    /// Forward velocity, m/s.
    pub vx: f64,
    /// Base height, m.
    pub h: f64,
    /// Base pitch, rad.
    pub pitch: f64,
}

impl Command {
    /// Stand still at the nominal height.
    pub fn standing(robot: &RobotModel) -> Self {
        Command {
            vx: 0.0,
            h: robot.base.nominal_height,
            pitch: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.vx, self.h, self.pitch]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandRanges {
    pub vx: (f64, f64),
    /// Height range as fractions of the nominal base height.
    pub h_frac: (f64, f64),
    pub pitch: (f64, f64),
    /// Probability that a sampled command is a standing command (`vx = 0`).
    pub standing_prob: f64,
}

impl Default for CommandRanges {
    fn default() -> Self {
        CommandRanges {
            vx: (-0.8, 1.2),
            h_frac: (0.85, 1.0),
            pitch: (-0.2, 0.2),
            standing_prob: 0.25,
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl CommandRanges {
    pub fn sample(&self, nominal_height: f64, rng: &mut impl Rng) -> Command {
        let standing = rng.random::<f64>() < self.standing_prob;
        let vx = uniform(rng, self.vx);
        let h = nominal_height * uniform(rng, self.h_frac);
        let pitch = uniform(rng, self.pitch);
        Command {
            vx: if standing { 0.0 } else { vx },
            h,
            pitch,
        }
    }

    /// Clamps every field into range.
    pub fn clamp(&self, cmd: Command, nominal_height: f64) -> Command {
        Command {
            vx: cmd.vx.clamp(self.vx.0, self.vx.1),
            h: cmd.h.clamp(nominal_height * self.h_frac.0, nominal_height * self.h_frac.1),
            pitch: cmd.pitch.clamp(self.pitch.0, self.pitch.1),
        }
    }

    pub fn contains(&self, cmd: &Command, nominal_height: f64) -> bool {
        self.clamp(*cmd, nominal_height) == *cmd
    }
}
