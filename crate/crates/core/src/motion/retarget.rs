//! Per-joint affine retargeting onto the robot's upper body.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{MotionClip, MotionDataset, MotionFrame};
use super::robot::RobotModel;
use crate::error::{Error, Result};

/// `dst = clamp(scale * src + offset)`; `dst` indexes the robot's upper joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetargetEntry {
    pub src: usize,
    pub dst: usize,
    pub scale: f64,
    pub offset: f64,
}

impl RetargetEntry {
    pub fn identity(i: usize) -> Self {
        RetargetEntry {
            src: i,
            dst: i,
            scale: 1.0,
            offset: 0.0,
        }
    }
}

pub fn parse_mapping(text: &str) -> Result<Vec<RetargetEntry>> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        context: "retarget mapping".into(),
        source: e,
    })
}

pub fn load_mapping(path: impl AsRef<Path>) -> Result<Vec<RetargetEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mapping(&text)
}

fn check_mapping(mapping: &[RetargetEntry], n_src: usize, n_upper: usize) -> Result<()> {
    let mut seen = vec![false; n_upper];
    for e in mapping {
        if e.dst >= n_upper {
            return Err(Error::Mapping(format!(
                "dst {} out of range for {n_upper} upper joints",
                e.dst
            )));
        }
        if seen[e.dst] {
            return Err(Error::Mapping(format!("dst {} mapped more than once", e.dst)));
        }
        seen[e.dst] = true;
        if e.src >= n_src {
            return Err(Error::Mapping(format!(
                "src {} out of range for {n_src}-value source frames",
                e.src
            )));
        }
        if !(e.scale.is_finite() && e.offset.is_finite()) {
            return Err(Error::Mapping(format!("dst {} has a non-finite scale or offset", e.dst)));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Mapping(format!("upper joint {missing} is not mapped")));
    }
    Ok(())
}

pub fn retarget_clip(
    source: &MotionClip,
    mapping: &[RetargetEntry],
    robot: &RobotModel,
) -> Result<MotionClip> {
    let n_upper = robot.n_upper();
    check_mapping(mapping, source.n_upper(), n_upper)?;
    let joints: Vec<_> = robot.upper_joints().collect();
    let frames = source
        .frames
        .iter()
        .map(|f| {
            let mut q = vec![0.0; n_upper];
            for e in mapping {
                q[e.dst] = joints[e.dst].clamp(e.scale * f.q_upper[e.src] + e.offset);
            }
            MotionFrame::new(q)
        })
        .collect();
    Ok(MotionClip {
        id: source.id.clone(),
        frame_rate_hz: source.frame_rate_hz,
        frames,
    })
}

/// Retargets every clip and relabels the joints with the robot's upper-joint names.
pub fn retarget_dataset(
    source: &MotionDataset,
    mapping: &[RetargetEntry],
    robot: &RobotModel,
) -> Result<MotionDataset> {
    let clips = source
        .clips
        .iter()
        .map(|c| retarget_clip(c, mapping, robot))
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionDataset {
        name: source.name.clone(),
        joint_names: robot.upper_joint_names(),
        clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(frames: Vec<Vec<f64>>) -> MotionClip {
        MotionClip::new("s", 30.0, frames.into_iter().map(MotionFrame::new).collect()).unwrap()
    }

    fn identity() -> Vec<RetargetEntry> {
        (0..4).map(RetargetEntry::identity).collect()
    }

    #[test]
    fn identity_within_limits_is_unchanged() {
        let r = RobotModel::planar_h1();
        let src = clip(vec![vec![0.1, 0.5, -0.3, 1.2], vec![0.2, 0.6, -0.2, 1.1]]);
        let out = retarget_clip(&src, &identity(), &r).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn values_above_limit_clamp_to_limit() {
        let r = RobotModel::planar_h1();
        let src = clip(vec![vec![3.0, 0.5, -0.3, 1.2]]);
        let out = retarget_clip(&src, &identity(), &r).unwrap();
        assert_eq!(out.frames[0].q_upper[0], r.joints[6].limit_hi);
    }

    #[test]
    fn affine_result() {
        let r = RobotModel::planar_h1();
        let src = clip(vec![vec![0.4, 1.0, -0.6, 2.0, 7.0]]);
        let map = vec![
            RetargetEntry { src: 0, dst: 0, scale: 0.5, offset: 0.1 },
            RetargetEntry { src: 1, dst: 1, scale: 0.5, offset: 0.1 },
            RetargetEntry { src: 2, dst: 2, scale: 0.5, offset: 0.1 },
            RetargetEntry { src: 3, dst: 3, scale: 0.5, offset: 0.1 },
        ];
        let out = retarget_clip(&src, &map, &r).unwrap();
        let expect = [0.3, 0.6, -0.2, 1.1];
        for (a, b) in out.frames[0].q_upper.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.frame_rate_hz, 30.0);
    }

    #[test]
    fn mapping_errors() {
        let r = RobotModel::planar_h1();
        let src = clip(vec![vec![0.0; 4]]);
        let mut dup = identity();
        dup[1].dst = 0;
        assert!(matches!(retarget_clip(&src, &dup, &r), Err(Error::Mapping(_))));
        let mut oob = identity();
        oob[2].src = 4;
        assert!(matches!(retarget_clip(&src, &oob, &r), Err(Error::Mapping(_))));
        assert!(matches!(retarget_clip(&src, &identity()[..3], &r), Err(Error::Mapping(_))));
    }

    #[test]
    fn mapping_file_schema() {
        let m = parse_mapping(r#"[{"src": 2, "dst": 0, "scale": -1.0, "offset": 0.25}]"#).unwrap();
        assert_eq!(m, vec![RetargetEntry { src: 2, dst: 0, scale: -1.0, offset: 0.25 }]);
        assert!(parse_mapping(r#"[{"src": 2}]"#).is_err());
    }
}
