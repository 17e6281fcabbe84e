use std::sync::Arc;

use pmp_core::eval::*;
use pmp_core::motion::{generate_synthetic_dataset, RobotModel, SynthSpec};
use pmp_core::rl::*;
use pmp_core::sim::{BasePose, BaseVel};
use proptest::prelude::*;

/// A standing robot at the default pose with the given tweaks applied per step.
fn constant_record(robot: &RobotModel, n: usize, edit: impl Fn(&mut TrajectoryStep)) -> TrajectoryRecord {
    let q0 = robot.q0();
    let upper = robot.upper_indices();
    let steps = (0..n)
        .map(|t| {
            let mut s = TrajectoryStep {
                time: 0.02 * (t + 1) as f64,
                q: q0.clone(),
                qdot: vec![0.0; q0.len()],
                upper_target: upper.iter().map(|&j| q0[j]).collect(),
                action: vec![0.0; robot.n_lower()],
                base: BasePose { x: 0.0, z: robot.base.nominal_height, pitch: 0.0 },
                base_vel: BaseVel { vx: 0.0, vz: 0.0, pitch_rate: 0.0 },
                command: Command::standing(robot),
            };
            edit(&mut s);
            s
        })
        .collect();
    TrajectoryRecord {
        clip_id: "c".into(),
        speed_factor: 1.0,
        alpha: 1.0,
        dt_control: 0.02,
        steps,
        push_times: vec![],
        total_reward: 0.0,
        survival_fraction: 1.0,
        termination: Termination::TimeLimit,
    }
}

#[test]
fn perfect_tracking_gives_zero_errors() {
    let robot = RobotModel::planar_h1();
    let m = compute_metrics(&constant_record(&robot, 20, |_| {}), &robot).unwrap();
    let v = m.values();
    assert!(v[..9].iter().all(|x| *x == 0.0), "{m:?}");
    assert_eq!(m.survival_fraction, 1.0);
}

#[test]
fn constant_offsets_match_closed_form() {
    let robot = RobotModel::planar_h1();
    let upper = robot.upper_indices();
    let r = constant_record(&robot, 25, |s| {
        for &j in &upper {
            s.q[j] -= 0.1;
        }
        s.base.pitch = 0.1;
        s.base_vel.vx = 0.3;
        s.base_vel.pitch_rate = -0.2;
    });
    let m = compute_metrics(&r, &robot).unwrap();
    assert!((m.e_jpe_upper - 0.1).abs() < 1e-12, "{}", m.e_jpe_upper);
    assert!((m.e_g - 0.1f64.sin()).abs() < 1e-12);
    assert!((m.e_vel - 0.3).abs() < 1e-12);
    assert!((m.e_ang - 0.2).abs() < 1e-12);
    assert_eq!(m.e_acc_upper, 0.0);
    assert_eq!(m.e_action_upper, 0.0);
    assert!(m.e_kpe_upper > 0.0);
}

#[test]
fn keypoint_error_of_a_single_joint_offset() {
    // Rotating only the last upper joint moves each keypoint on its link along an arc:
    // the chord is 2 r sin(δ/2), where r is the keypoint's distance from that joint.
    let robot = RobotModel::planar_h1();
    let upper = robot.upper_indices();
    let j = *upper.last().unwrap();
    let radii: Vec<f64> = robot
        .keypoints
        .iter()
        .filter(|k| k.link == j)
        .map(|k| (k.point[0].powi(2) + k.point[1].powi(2)).sqrt())
        .collect();
    assert!(radii.iter().any(|r| *r > 0.0));
    let n_upper_kp = robot.keypoints.iter().filter(|k| robot.keypoint_is_upper(k)).count() as f64;
    let delta = 0.2;
    let rec = constant_record(&robot, 10, |s| s.q[j] += delta);
    let m = compute_metrics(&rec, &robot).unwrap();
    let expect = radii.iter().map(|r| 2.0 * r * (delta / 2.0).sin()).sum::<f64>() / n_upper_kp;
    assert!((m.e_kpe_upper - expect).abs() < 1e-12, "{} vs {}", m.e_kpe_upper, expect);
}

#[test]
fn linear_velocity_ramp_has_constant_acceleration() {
    let robot = RobotModel::planar_h1();
    let lower = robot.lower_indices();
    let rec = constant_record(&robot, 12, |s| {
        let t = s.time;
        for &j in &lower {
            s.qdot[j] = 3.0 * t;
        }
        s.action = vec![t; lower.len()];
    });
    let m = compute_metrics(&rec, &robot).unwrap();
    assert!((m.e_acc_lower - 3.0).abs() < 1e-10);
    assert!((m.e_action_lower - 0.02).abs() < 1e-12);
}

#[test]
fn short_trajectories_are_rejected() {
    let robot = RobotModel::planar_h1();
    assert!(compute_metrics(&constant_record(&robot, 2, |_| {}), &robot).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn per_step_means_split_by_length(n in 6usize..60, cut_frac in 0.2f64..0.8, seed in 0u64..1000) {
        let robot = RobotModel::planar_h1();
        let upper = robot.upper_indices();
        let wobble = |t: f64, k: f64| ((t * 13.0 + seed as f64) * k).sin();
        let rec = constant_record(&robot, n, |s| {
            let t = s.time;
            for (i, &j) in upper.iter().enumerate() {
                s.q[j] += 0.2 * wobble(t, 1.0 + i as f64);
            }
            s.base.pitch = 0.3 * wobble(t, 0.7);
            s.base_vel.vx = wobble(t, 2.1);
            s.base_vel.pitch_rate = wobble(t, 1.3);
        });
        let cut = ((n as f64 * cut_frac) as usize).clamp(3, n - 3);
        let mut a = rec.clone();
        a.steps.truncate(cut);
        let mut b = rec.clone();
        b.steps.drain(..cut);
        let (whole, ma, mb) = (
            compute_metrics(&rec, &robot).unwrap(),
            compute_metrics(&a, &robot).unwrap(),
            compute_metrics(&b, &robot).unwrap(),
        );
        let w = |x: f64, y: f64| (x * cut as f64 + y * (n - cut) as f64) / n as f64;
        for k in [0usize, 1, 4, 5, 8] {
            prop_assert!((whole.values()[k] - w(ma.values()[k], mb.values()[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn metrics_are_non_negative(seed in 0u64..500) {
        let robot = RobotModel::planar_h1();
        let rec = constant_record(&robot, 8, |s| {
            let t = s.time * (seed as f64 + 1.0);
            s.q.iter_mut().for_each(|q| *q += t.sin());
            s.qdot.iter_mut().for_each(|q| *q = t.cos());
            s.base.pitch = -t.sin() * 0.5;
            s.action.iter_mut().for_each(|a| *a = (3.0 * t).sin());
        });
        let m = compute_metrics(&rec, &robot).unwrap();
        prop_assert!(m.values().iter().all(|v| *v >= 0.0));
    }
}

fn row(trial: Option<usize>, x: f64) -> EvalRow {
    EvalRow {
        method: "pmp".into(),
        clip_id: "wave_000".into(),
        trial,
        push_vel: 0.25,
        speed_factor: 1.5,
        metrics: EpisodeMetrics::from_values([x, 0.1, 1.0 / 3.0, 2.5e-7, 0.0, 1.0, 7.0, 0.3, 0.09983341664682815, 0.55]),
    }
}

#[test]
fn csv_header_and_round_trips() {
    let rows = vec![row(Some(0), 0.012), row(None, 1e-17)];
    let csv = rows_to_csv(&rows);
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(
        CSV_HEADER,
        "method,clip_id,trial,push_vel,speed_factor,E_jpe_upper,E_kpe_upper,E_acc_upper,E_action_upper,E_vel,E_ang,E_acc_lower,E_action_lower,E_g,survival"
    );
    assert_eq!(rows_from_csv(&csv).unwrap(), rows);
    let json = rows_to_json(&rows);
    let back: Vec<EvalRow> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rows);
    assert!(json.contains("\"E_jpe_upper\""));
}

#[test]
fn empty_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    emit_report(&[], &p, ReportFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{CSV_HEADER}\n"));
    let bad = dir.path().join("missing").join("r.csv");
    assert!(matches!(emit_report(&[], &bad, ReportFormat::Json), Err(pmp_core::Error::Io { .. })));
}

fn small_env() -> LocoEnv {
    let robot = RobotModel::planar_h1();
    let spec = SynthSpec {
        n_clips: 3,
        frames_per_clip: 120,
        ..Default::default()
    };
    let ds = generate_synthetic_dataset(&spec, 0, &robot);
    let config = EnvConfig {
        max_episode_s: 1.2,
        ..Default::default()
    };
    LocoEnv::new(robot, config, Arc::new(ds), None).unwrap()
}

#[test]
fn eval_table_shape_and_determinism() {
    let mut env = small_env();
    let opts = EvalOptions {
        n_traj: 2,
        seed: 3,
        alpha: 0.3,
    };
    let a = run_eval(&mut env, ActionSource::Zero, "zero", &opts).unwrap();
    let b = run_eval(&mut env, ActionSource::Zero, "zero", &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.episodes.len(), 6);
    assert_eq!(a.per_clip.len(), 3);
    assert_eq!(a.aggregate.clip_id, AGGREGATE_CLIP);
    assert_eq!(rows_to_csv(&a.all_rows()).lines().count(), 1 + 6 + 3 + 1);
}

#[test]
fn sweep_covers_the_grid_and_null_points_match_plain_eval() {
    let mut env = small_env();
    let opts = EvalOptions {
        n_traj: 2,
        seed: 1,
        alpha: 0.3,
    };
    let spec = RobustnessSpec {
        push_vels: vec![0.0, 0.4],
        speed_factors: vec![1.0, 2.0],
        push_interval: 0.5,
        trials_per_clip: 2,
    };
    let plain = run_eval(&mut env, ActionSource::Zero, "zero", &opts).unwrap();
    let sweep = robustness_sweep(&mut env, ActionSource::Zero, "zero", &spec, &opts).unwrap();
    assert_eq!(sweep.curves.len(), 4);
    assert_eq!(sweep.episodes.len(), 4 * 3 * 2);
    let grid: Vec<(f64, f64)> = sweep.curves.iter().map(|c| (c.push_vel, c.speed_factor)).collect();
    assert_eq!(grid, vec![(0.0, 1.0), (0.4, 1.0), (0.0, 1.0), (0.0, 2.0)]);
    assert_eq!(sweep.curves[0].metrics, plain.aggregate.metrics);
    assert_eq!(sweep.curves[2].metrics, plain.aggregate.metrics);
    assert_ne!(sweep.curves[1].metrics, plain.aggregate.metrics);
}

#[test]
fn pushes_land_every_five_seconds() {
    let robot = RobotModel::planar_h1();
    let ds = generate_synthetic_dataset(&SynthSpec { n_clips: 1, ..Default::default() }, 0, &robot);
    let mut env = LocoEnv::new(robot.clone(), EnvConfig::default(), Arc::new(ds), None).unwrap();
    let setup = EpisodeSetup {
        clip: 0,
        command: Command::standing(&robot),
        speed_factor: 1.0,
        alpha: 0.0,
        push: Some(PushSchedule { vel: 0.05, interval: 5.0 }),
        seed: 0,
    };
    let r = run_episode(&mut env, &setup, ActionSource::Zero).unwrap();
    assert_eq!(r.termination, Termination::TimeLimit);
    assert_eq!(r.push_times.len(), 3);
    for (t, e) in r.push_times.iter().zip([5.0, 10.0, 15.0]) {
        assert!((t - e).abs() < 1e-6, "{t}");
    }
}
