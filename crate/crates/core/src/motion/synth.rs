//! Procedural upper-body motion: arm waves, reach-and-hold ramps and carry poses.
//!
//! Clips blend in from the default pose over the first second so that playback from a
//! robot standing at `q0` starts without a target jump. The first half of the upper
//! joints is treated as one arm and the second half as the other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{MotionClip, MotionDataset, MotionFrame};
use super::robot::RobotModel;

const BLEND_IN_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    Wave,
    ReachHold,
    Carry,
}

impl MotionFamily {
    pub fn tag(self) -> &'static str {
        match self {
            MotionFamily::Wave => "wave",
            MotionFamily::ReachHold => "reach",
            MotionFamily::Carry => "carry",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_clips: usize,
    pub frames_per_clip: usize,
    pub frame_rate_hz: f64,
    /// Families are assigned round-robin over clips.
    pub motion_families: Vec<MotionFamily>,
    /// Multiplies wave amplitudes and reach excursions; values above 1 push past the limits
    /// and get clamped.
    pub amplitude_scale: f64,
    pub wave_freq_hz: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_clips: 25,
            frames_per_clip: 300,
            frame_rate_hz: 50.0,
            motion_families: vec![MotionFamily::Wave, MotionFamily::ReachHold, MotionFamily::Carry],
            amplitude_scale: 1.0,
            wave_freq_hz: (0.15, 0.6),
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

struct Ctx<'a> {
    robot: &'a RobotModel,
    lo: Vec<f64>,
    hi: Vec<f64>,
    q0: Vec<f64>,
}

impl Ctx<'_> {
    fn n(&self) -> usize {
        self.q0.len()
    }

    fn half_range(&self, j: usize) -> f64 {
        0.5 * (self.hi[j] - self.lo[j])
    }
}

pub fn generate_synthetic_dataset(spec: &SynthSpec, seed: u64, robot: &RobotModel) -> MotionDataset {
    assert!(spec.n_clips >= 1, "n_clips must be at least 1");
    assert!(spec.frames_per_clip >= 1 && spec.frame_rate_hz > 0.0);
    let families = if spec.motion_families.is_empty() {
        SynthSpec::default().motion_families
    } else {
        spec.motion_families.clone()
    };
    let ctx = Ctx {
        robot,
        lo: robot.upper_joints().map(|j| j.limit_lo).collect(),
        hi: robot.upper_joints().map(|j| j.limit_hi).collect(),
        q0: robot.q0_upper(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips = (0..spec.n_clips)
        .map(|i| {
            let family = families[i % families.len()];
            let raw = match family {
                MotionFamily::Wave => wave(&ctx, spec, &mut rng),
                MotionFamily::ReachHold => reach_hold(&ctx, spec, &mut rng),
                MotionFamily::Carry => carry(&ctx, spec, &mut rng),
            };
            let frames = raw
                .into_iter()
                .enumerate()
                .map(|(k, q)| {
                    let s = smoothstep(k as f64 / spec.frame_rate_hz / BLEND_IN_S);
                    let mut q: Vec<f64> = q
                        .iter()
                        .zip(&ctx.q0)
                        .map(|(v, q0)| q0 + s * (v - q0))
                        .collect();
                    ctx.robot.clamp_upper(&mut q);
                    MotionFrame::new(q)
                })
                .collect();
            MotionClip {
                id: format!("{}_{i:03}", family.tag()),
                frame_rate_hz: spec.frame_rate_hz,
                frames,
            }
        })
        .collect();
    MotionDataset {
        name: format!("synthetic_{seed}"),
        joint_names: robot.upper_joint_names(),
        clips,
    }
}

fn wave(ctx: &Ctx, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = ctx.n();
    let params: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|j| {
            let hr = ctx.half_range(j);
            let center = (ctx.q0[j] + rng.random_range(-0.15..0.25) * hr).clamp(ctx.lo[j], ctx.hi[j]);
            let amp = spec.amplitude_scale * rng.random_range(0.15..0.45) * hr;
            let f = rng.random_range(spec.wave_freq_hz.0..=spec.wave_freq_hz.1);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (center, amp, f, phase)
        })
        .collect();
    (0..spec.frames_per_clip)
        .map(|k| {
            let t = k as f64 / spec.frame_rate_hz;
            params
                .iter()
                .map(|&(c, a, f, p)| c + a * (std::f64::consts::TAU * f * t + p).sin())
                .collect()
        })
        .collect()
}

fn reach_hold(ctx: &Ctx, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = ctx.n();
    let mut pose = ctx.q0.clone();
    let mut out = Vec::with_capacity(spec.frames_per_clip);
    while out.len() < spec.frames_per_clip {
        let target: Vec<f64> = (0..n)
            .map(|j| ctx.q0[j] + spec.amplitude_scale * rng.random_range(-0.3..0.8) * ctx.half_range(j))
            .collect();
        let ramp = (rng.random_range(0.6..1.5) * spec.frame_rate_hz).round().max(1.0) as usize;
        let hold = (rng.random_range(0.4..1.5) * spec.frame_rate_hz).round() as usize;
        for k in 1..=ramp {
            let s = smoothstep(k as f64 / ramp as f64);
            out.push((0..n).map(|j| pose[j] + s * (target[j] - pose[j])).collect());
        }
        for _ in 0..hold {
            out.push(target.clone());
        }
        pose = target;
    }
    out.truncate(spec.frames_per_clip);
    out
}

fn carry(ctx: &Ctx, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = ctx.n();
    let half = n / 2;
    let first_arm: bool = rng.random();
    let pose: Vec<f64> = (0..n)
        .map(|j| {
            let carrying = (j < half) == first_arm;
            if carrying {
                ctx.lo[j] + rng.random_range(0.55..0.75) * (ctx.hi[j] - ctx.lo[j])
            } else {
                ctx.q0[j] + rng.random_range(-0.05..0.05) * ctx.half_range(j)
            }
        })
        .collect();
    vec![pose; spec.frames_per_clip]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_ids() {
        let r = RobotModel::planar_h1();
        let ds = generate_synthetic_dataset(&SynthSpec::default(), 3, &r);
        assert_eq!(ds.clips.len(), 25);
        assert!(ds.clips.iter().all(|c| c.len() == 300 && c.n_upper() == 4));
        assert_eq!(ds.clips[0].id, "wave_000");
        assert_eq!(ds.clips[1].id, "reach_001");
        assert_eq!(ds.clips[2].id, "carry_002");
        ds.validate().unwrap();
    }

    #[test]
    fn deterministic_in_seed() {
        let r = RobotModel::planar_h1();
        let spec = SynthSpec::default();
        assert_eq!(
            generate_synthetic_dataset(&spec, 11, &r),
            generate_synthetic_dataset(&spec, 11, &r)
        );
        assert_ne!(
            generate_synthetic_dataset(&spec, 11, &r),
            generate_synthetic_dataset(&spec, 12, &r)
        );
    }

    #[test]
    fn starts_at_default_pose() {
        let r = RobotModel::planar_h1();
        let ds = generate_synthetic_dataset(&SynthSpec::default(), 0, &r);
        for c in &ds.clips {
            assert_eq!(c.frames[0].q_upper, r.q0_upper());
        }
    }

    #[test]
    fn carry_is_static_after_blend_in() {
        let r = RobotModel::planar_h1();
        let spec = SynthSpec {
            motion_families: vec![MotionFamily::Carry],
            n_clips: 4,
            ..SynthSpec::default()
        };
        for c in generate_synthetic_dataset(&spec, 5, &r).clips {
            assert_eq!(c.frames[60], c.frames[299]);
            // one shoulder is raised forward, the other stays near neutral
            let (l, rs) = (c.frames[299].q_upper[0], c.frames[299].q_upper[2]);
            assert!(l.max(rs) > 0.9 && l.min(rs).abs() < 0.2, "{l} {rs}");
        }
    }
}
