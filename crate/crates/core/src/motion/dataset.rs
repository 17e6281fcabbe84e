//! Upper-body motion clips, the JSON dataset format, windowing and playback.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::robot::RobotModel;
use crate::error::{Error, Result};

/// Upper-body joint targets for one frame, in robot upper-joint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotionFrame {
    pub q_upper: Vec<f64>,
}

impl MotionFrame {
    pub fn new(q_upper: Vec<f64>) -> Self {
        MotionFrame { q_upper }
    }

    pub fn len(&self) -> usize {
        self.q_upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_upper.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub id: String,
    pub frame_rate_hz: f64,
    pub frames: Vec<MotionFrame>,
}

impl MotionClip {
    pub fn new(id: impl Into<String>, frame_rate_hz: f64, frames: Vec<MotionFrame>) -> Result<Self> {
        let clip = MotionClip {
            id: id.into(),
            frame_rate_hz,
            frames,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Schema(format!("clip '{}' has no frames", self.id)));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(Error::Schema(format!(
                "clip '{}' frame rate must be positive, got {}",
                self.id, self.frame_rate_hz
            )));
        }
        let n = self.frames[0].len();
        for (k, f) in self.frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::Schema(format!(
                    "clip '{}' frame {k} has {} values, expected {n}",
                    self.id,
                    f.len()
                )));
            }
            if let Some(j) = f.q_upper.iter().position(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "clip '{}' frame {k} value {j} is not finite",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn n_upper(&self) -> usize {
        self.frames[0].len()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Playback length in seconds at speed factor 1.
    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 / self.frame_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionDataset {
    pub name: String,
    pub joint_names: Vec<String>,
    pub clips: Vec<MotionClip>,
}

impl MotionDataset {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for c in &self.clips {
            c.validate()?;
            if !ids.insert(c.id.as_str()) {
                return Err(Error::Schema(format!("duplicate clip id '{}'", c.id)));
            }
            if c.n_upper() != self.joint_names.len() {
                return Err(Error::Schema(format!(
                    "clip '{}' has {} joints per frame, dataset declares {}",
                    c.id,
                    c.n_upper(),
                    self.joint_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn clip(&self, id: &str) -> Option<&MotionClip> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn n_upper(&self) -> usize {
        self.joint_names.len()
    }

    pub fn to_json_string(&self) -> String {
        let rate = self.clips.first().map_or(50.0, |c| c.frame_rate_hz);
        let file = DatasetFile {
            name: self.name.clone(),
            frame_rate_hz: rate,
            joint_names: self.joint_names.clone(),
            clips: self
                .clips
                .iter()
                .map(|c| ClipFile {
                    id: c.id.clone(),
                    frame_rate_hz: (c.frame_rate_hz != rate).then_some(c.frame_rate_hz),
                    frames: c.frames.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("dataset serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    name: String,
    frame_rate_hz: f64,
    joint_names: Vec<String>,
    clips: Vec<ClipFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipFile {
    id: String,
    /// Present only when a clip's rate differs from the dataset-level rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_rate_hz: Option<f64>,
    frames: Vec<MotionFrame>,
}

/// A dataset together with how many values had to be clamped into joint limits.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: MotionDataset,
    pub clamped_values: usize,
}

impl LoadedDataset {
    pub fn clamped(&self) -> bool {
        self.clamped_values > 0
    }
}

/// Parses and validates a dataset against `robot`, clamping frames into joint limits.
pub fn parse_dataset(text: &str, context: &str, robot: &RobotModel) -> Result<LoadedDataset> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        source: e,
    })?;
    let n_upper = robot.n_upper();
    if file.joint_names.len() != n_upper {
        return Err(Error::Schema(format!(
            "{context}: dataset has {} joint names, robot has {n_upper} upper joints",
            file.joint_names.len()
        )));
    }
    if file.joint_names != robot.upper_joint_names() {
        log::warn!(
            "{context}: joint names {:?} differ from robot upper joints {:?}; using positional order",
            file.joint_names,
            robot.upper_joint_names()
        );
    }
    let mut clamped_values = 0;
    let mut clips = Vec::with_capacity(file.clips.len());
    for c in file.clips {
        let mut clip = MotionClip {
            id: c.id,
            frame_rate_hz: c.frame_rate_hz.unwrap_or(file.frame_rate_hz),
            frames: c.frames,
        };
        clip.validate()
            .map_err(|e| Error::Schema(format!("{context}: {}", strip_prefix(&e))))?;
        if clip.n_upper() != n_upper {
            return Err(Error::Schema(format!(
                "{context}: clip '{}' frame 0 has {} values, expected {n_upper}",
                clip.id,
                clip.n_upper()
            )));
        }
        for f in &mut clip.frames {
            for (q, j) in f.q_upper.iter_mut().zip(robot.upper_joints()) {
                let c = j.clamp(*q);
                if c != *q {
                    *q = c;
                    clamped_values += 1;
                }
            }
        }
        clips.push(clip);
    }
    let dataset = MotionDataset {
        name: file.name,
        joint_names: file.joint_names,
        clips,
    };
    dataset.validate()?;
    if clamped_values > 0 {
        log::warn!("{context}: clamped {clamped_values} values into joint limits");
    }
    Ok(LoadedDataset {
        dataset,
        clamped_values,
    })
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Schema(m) => m.clone(),
        other => other.to_string(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>, robot: &RobotModel) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string(), robot)
}

/// A pair of consecutive windows: `m0` covers frames `t-W..t-1`, `m1` covers `t..t+W-1`.
///
/// Windows are stored flattened, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWindowPair {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    pub window: usize,
    pub n_upper: usize,
    pub source_clip: String,
    /// Index of the first frame of `m1`.
    pub t_index: usize,
}

impl MotionWindowPair {
    pub fn m0_frame(&self, k: usize) -> &[f64] {
        &self.m0[k * self.n_upper..(k + 1) * self.n_upper]
    }

    pub fn m1_frame(&self, k: usize) -> &[f64] {
        &self.m1[k * self.n_upper..(k + 1) * self.n_upper]
    }
}

/// Number of pairs `window_pairs` yields.
pub fn window_pair_count(frames: usize, window: usize, stride: usize) -> usize {
    if frames < 2 * window {
        0
    } else {
        (frames - 2 * window) / stride + 1
    }
}

/// All consecutive window pairs, with `t` advancing by `stride` from `W`.
pub fn window_pairs(clip: &MotionClip, window: usize, stride: usize) -> Vec<MotionWindowPair> {
    assert!(window >= 1 && stride >= 1, "window and stride must be at least 1");
    let n = clip.n_upper();
    let flat = |from: usize| -> Vec<f64> {
        clip.frames[from..from + window]
            .iter()
            .flat_map(|f| f.q_upper.iter().copied())
            .collect()
    };
    (0..window_pair_count(clip.len(), window, stride))
        .map(|i| {
            let t = window + i * stride;
            MotionWindowPair {
                m0: flat(t - window),
                m1: flat(t),
                window,
                n_upper: n,
                source_clip: clip.id.clone(),
                t_index: t,
            }
        })
        .collect()
}

/// Multiplies the playback rate; frames are untouched.
pub fn resample_clip(clip: &MotionClip, speed_factor: f64) -> Result<MotionClip> {
    if !(speed_factor > 0.0 && speed_factor.is_finite()) {
        return Err(Error::Argument(format!(
            "speed factor must be positive, got {speed_factor}"
        )));
    }
    Ok(MotionClip {
        id: clip.id.clone(),
        frame_rate_hz: clip.frame_rate_hz * speed_factor,
        frames: clip.frames.clone(),
    })
}

/// Linearly interpolated target at `sim_time`, holding the final frame past the end.
pub fn upper_target_at(clip: &MotionClip, sim_time: f64, speed_factor: f64) -> MotionFrame {
    let mut out = vec![0.0; clip.n_upper()];
    upper_target_into(clip, sim_time, speed_factor, &mut out);
    MotionFrame::new(out)
}

/// Allocation-free form of [`upper_target_at`].
pub fn upper_target_into(clip: &MotionClip, sim_time: f64, speed_factor: f64, out: &mut [f64]) {
    let last = clip.frames.len() - 1;
    let pos = (sim_time.max(0.0) * speed_factor * clip.frame_rate_hz).max(0.0);
    let k = pos.floor();
    if k as usize >= last || !pos.is_finite() {
        out.copy_from_slice(&clip.frames[last].q_upper);
        return;
    }
    let k = k as usize;
    let frac = pos - k as f64;
    let (a, b) = (&clip.frames[k].q_upper, &clip.frames[k + 1].q_upper);
    for j in 0..out.len() {
        out[j] = a[j] + frac * (b[j] - a[j]);
    }
}
