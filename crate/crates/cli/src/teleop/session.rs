//! The simulated robot behind a teleoperation server.

use pmp_core::rl::{Command, EpisodeSetup, LocoEnv, Policy, Termination};
use serde::{Deserialize, Serialize};

use super::wire::{BaseWire, CommandWire, ContactWire, InstMetrics, StateMsg, TeleopMessage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionOptions {
    /// Blend applied to clip targets once a clip is selected. Until then the upper body
    /// holds its default pose.
    pub alpha: f64,
    /// Clip playing at startup; `None` starts idle.
    pub clip: Option<String>,
    pub speed: f64,
    /// Seeds latent sampling; bumped on every reset.
    pub seed: u64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            alpha: 1.0,
            clip: None,
            speed: 1.0,
            seed: 0,
        }
    }
}

/// One simulated robot driven by a policy, a held command and clip playback.
///
/// Episode time limits are ignored: the session runs until the robot falls or the
/// simulation diverges, either of which resets it.
pub struct TeleopSession {
    env: LocoEnv,
    policy: Policy<f64>,
    options: SessionOptions,
    clip_ids: Vec<String>,
    playing: bool,
    clip_elapsed: f64,
    paused: bool,
    resets: u64,
    obs: Vec<f64>,
}

impl TeleopSession {
    pub fn new(mut env: LocoEnv, policy: Policy<f64>, options: SessionOptions) -> pmp_core::Result<Self> {
        env.check_policy(&policy)?;
        let clip_ids: Vec<String> = env.dataset().clips.iter().map(|c| c.id.clone()).collect();
        let (clip, playing) = match &options.clip {
            Some(id) => match clip_ids.iter().position(|c| c == id) {
                Some(i) => (i, true),
                None => return Err(pmp_core::Error::Argument(format!("unknown clip '{id}'"))),
            },
            None => (0, false),
        };
        let setup = EpisodeSetup {
            clip,
            command: Command::standing(env.robot()),
            speed_factor: options.speed,
            alpha: if playing { options.alpha } else { 0.0 },
            push: None,
            seed: options.seed,
        };
        env.reset(&setup)?;
        Ok(TeleopSession {
            env,
            policy,
            options,
            clip_ids,
            playing,
            clip_elapsed: 0.0,
            paused: false,
            resets: 0,
            obs: Vec::new(),
        })
    }

    pub fn env(&self) -> &LocoEnv {
        &self.env
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn dt(&self) -> f64 {
        self.env.dt_control()
    }

    /// Simulated seconds since the last reset.
    pub fn sim_time(&self) -> f64 {
        self.env.state().time
    }

    /// Number of resets so far, requested or automatic.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    fn reset(&mut self) -> pmp_core::Result<()> {
        self.resets += 1;
        let setup = EpisodeSetup {
            clip: self.env.clip_index(),
            command: self.env.command(),
            speed_factor: self.env.speed_factor(),
            alpha: self.env.alpha(),
            push: None,
            seed: self.options.seed.wrapping_add(self.resets),
        };
        self.clip_elapsed = 0.0;
        self.env.reset(&setup)
    }

    /// Applies a validated client message. `Err` carries the text of an `error` reply.
    pub fn apply(&mut self, msg: &TeleopMessage) -> Result<(), String> {
        match msg {
            TeleopMessage::Cmd { vx, h, pitch } => {
                self.env.set_command(Command { vx: *vx, h: *h, pitch: *pitch });
            }
            TeleopMessage::SelectClip { clip_id, speed } => {
                let idx = self
                    .clip_ids
                    .iter()
                    .position(|c| c == clip_id)
                    .ok_or_else(|| format!("unknown clip '{clip_id}'"))?;
                self.env.select_clip(idx, *speed).map_err(|e| e.to_string())?;
                if !self.playing {
                    self.playing = true;
                    self.env.set_alpha(self.options.alpha);
                }
                self.clip_elapsed = 0.0;
            }
            TeleopMessage::Push { vel } => self.env.push_now(*vel),
            TeleopMessage::Reset {} => self.reset().map_err(|e| e.to_string())?,
            TeleopMessage::Pause { on } => self.paused = *on,
            _ => return Err("server-only message type cannot be sent by a client".into()),
        }
        Ok(())
    }

    /// Advances one control step unless paused. Returns the text of an `error` broadcast
    /// when the robot had to be reset.
    pub fn step(&mut self) -> Option<String> {
        if self.paused {
            return None;
        }
        self.env.observation_into(&mut self.obs);
        let outcome = self
            .policy
            .forward(&self.obs)
            .and_then(|out| self.env.step(&out.mean));
        let reason = match outcome {
            Ok(o) => match o.termination {
                None | Some(Termination::TimeLimit) => None,
                Some(Termination::Fell) => Some("robot fell"),
                Some(Termination::Pitch) => Some("robot tipped over"),
                Some(Termination::Diverged) => Some("simulation diverged"),
            },
            Err(e) => {
                log::warn!("teleop step failed: {e}");
                Some("simulation diverged")
            }
        };
        if let Some(reason) = reason {
            return Some(match self.reset() {
                Ok(()) => format!("{reason}; session reset"),
                Err(e) => format!("{reason}; reset failed: {e}"),
            });
        }
        self.loop_clip();
        None
    }

    /// Restarts the active clip once it has played through.
    fn loop_clip(&mut self) {
        if !self.playing {
            return;
        }
        self.clip_elapsed += self.dt();
        let clip = &self.env.dataset().clips[self.env.clip_index()];
        if self.clip_elapsed * self.env.speed_factor() >= clip.duration() {
            let (idx, speed) = (self.env.clip_index(), self.env.speed_factor());
            if self.env.select_clip(idx, speed).is_ok() {
                self.clip_elapsed = 0.0;
            }
        }
    }

    pub fn snapshot(&self) -> StateMsg {
        let s = self.env.state();
        let c = self.env.command();
        StateMsg {
            t: s.time,
            base: BaseWire {
                x: s.base.x,
                z: s.base.z,
                pitch: s.base.pitch,
            },
            q: s.q.clone(),
            qdot_norm: s.qdot.iter().map(|v| v * v).sum::<f64>().sqrt(),
            contacts: self
                .env
                .contacts()
                .iter()
                .map(|f| ContactWire {
                    x: f.point[0],
                    z: f.point[1],
                    normal: f.normal,
                    tangential: f.tangential,
                })
                .collect(),
            command: CommandWire {
                vx: c.vx,
                h: c.h,
                pitch: c.pitch,
            },
            metrics: InstMetrics {
                e_vel_inst: (c.vx - s.base_vel.vx).abs(),
                e_g_inst: s.base.pitch.sin().abs(),
            },
            alpha: self.env.alpha(),
        }
    }
}
