//! Planar robot description: joints, rigid links, contact points and keypoints.
//!
//! Every link `i` is driven by joint `i`. A link's frame sits at `origin` in its parent
//! frame (the base frame when `parent` is null) rotated by the joint angle. Angles are
//! counter-clockwise in the sagittal (x, z) plane, x forward and z up.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PLANAR_H1: &str = include_str!("../../assets/planar_h1.json");

fn default_armature() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub index: usize,
    pub limit_lo: f64,
    pub limit_hi: f64,
    pub default_q0: f64,
    pub torque_limit: f64,
    pub is_upper: bool,
    /// Reflected rotor inertia added to the joint's diagonal mass-matrix entry.
    #[serde(default = "default_armature")]
    pub armature: f64,
}

impl JointSpec {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.limit_lo, self.limit_hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub parent: Option<usize>,
    pub origin: [f64; 2],
    /// Distal end in the link frame.
    pub tip: [f64; 2],
    pub mass: f64,
    pub inertia: f64,
    pub com_offset: [f64; 2],
    #[serde(default)]
    pub contact_points: Vec<[f64; 2]>,
}

impl LinkSpec {
    pub fn length(&self) -> f64 {
        self.tip[0].hypot(self.tip[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub mass: f64,
    pub inertia: f64,
    pub nominal_height: f64,
    #[serde(default)]
    pub com_offset: [f64; 2],
    #[serde(default)]
    pub contact_points: Vec<[f64; 2]>,
}

/// A point rigidly attached to a link, tracked for keypoint error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub link: usize,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub base: BaseSpec,
    pub joints: Vec<JointSpec>,
    pub links: Vec<LinkSpec>,
    pub feet: Vec<usize>,
    pub keypoints: Vec<Keypoint>,
}

impl RobotModel {
    /// The bundled 10-joint planar humanoid.
    pub fn planar_h1() -> Self {
        Self::from_json(PLANAR_H1).expect("bundled robot model is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: RobotModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "robot model".into(),
            source: e,
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Schema(format!("robot model: {msg}")));
        if self.joints.is_empty() {
            return bad("no joints".into());
        }
        if self.links.len() != self.joints.len() {
            return bad(format!(
                "{} links for {} joints; every joint drives exactly one link",
                self.links.len(),
                self.joints.len()
            ));
        }
        if !(self.base.mass > 0.0 && self.base.inertia > 0.0) {
            return bad("base mass and inertia must be positive".into());
        }
        for (i, j) in self.joints.iter().enumerate() {
            if j.index != i {
                return bad(format!("joint '{}' has index {}, expected {i}", j.name, j.index));
            }
            if !(j.limit_lo < j.limit_hi) {
                return bad(format!("joint '{}' has limit_lo >= limit_hi", j.name));
            }
            if !(j.limit_lo <= j.default_q0 && j.default_q0 <= j.limit_hi) {
                return bad(format!("joint '{}' default_q0 outside its limits", j.name));
            }
            if !(j.torque_limit > 0.0) || j.armature < 0.0 {
                return bad(format!("joint '{}' needs positive torque limit and armature >= 0", j.name));
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            if let Some(p) = l.parent {
                if p >= i {
                    return bad(format!("link '{}' must come after its parent", l.name));
                }
            }
            if !(l.mass > 0.0 && l.inertia > 0.0) {
                return bad(format!("link '{}' mass and inertia must be positive", l.name));
            }
        }
        for &f in &self.feet {
            if f >= self.links.len() {
                return bad(format!("foot link {f} out of range"));
            }
        }
        for k in &self.keypoints {
            if k.link >= self.links.len() {
                return bad(format!("keypoint '{}' references link {}", k.name, k.link));
            }
        }
        if self.n_upper() == 0 || self.n_lower() == 0 {
            return bad("need at least one upper and one lower joint".into());
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_upper(&self) -> usize {
        self.joints.iter().filter(|j| j.is_upper).count()
    }

    pub fn n_lower(&self) -> usize {
        self.joints.len() - self.n_upper()
    }

    pub fn upper_indices(&self) -> Vec<usize> {
        self.joints.iter().filter(|j| j.is_upper).map(|j| j.index).collect()
    }

    pub fn lower_indices(&self) -> Vec<usize> {
        self.joints.iter().filter(|j| !j.is_upper).map(|j| j.index).collect()
    }

    pub fn upper_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.joints.iter().filter(|j| j.is_upper)
    }

    pub fn lower_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.joints.iter().filter(|j| !j.is_upper)
    }

    pub fn q0(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.default_q0).collect()
    }

    pub fn q0_upper(&self) -> Vec<f64> {
        self.upper_joints().map(|j| j.default_q0).collect()
    }

    pub fn q0_lower(&self) -> Vec<f64> {
        self.lower_joints().map(|j| j.default_q0).collect()
    }

    pub fn upper_joint_names(&self) -> Vec<String> {
        self.upper_joints().map(|j| j.name.clone()).collect()
    }

    /// Clamps an upper-body vector in place; returns whether anything changed.
    pub fn clamp_upper(&self, q_upper: &mut [f64]) -> bool {
        let mut changed = false;
        for (q, j) in q_upper.iter_mut().zip(self.upper_joints()) {
            let c = j.clamp(*q);
            if c != *q {
                *q = c;
                changed = true;
            }
        }
        changed
    }

    pub fn total_mass(&self) -> f64 {
        self.base.mass + self.links.iter().map(|l| l.mass).sum::<f64>()
    }

    /// Whether a keypoint rides on an upper-body chain.
    pub fn keypoint_is_upper(&self, k: &Keypoint) -> bool {
        self.joints[k.link].is_upper
    }
}
