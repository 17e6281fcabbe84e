use std::path::Path;
use std::process::{Command, Output};

use pmp_core::eval::{rows_from_csv, AGGREGATE_CLIP};
use pmp_core::motion::RobotModel;
use pmp_core::rl::{Policy, PolicyConfig};

fn pmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmp"))
        .args(args)
        .env("PMP_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_data_is_deterministic_in_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.json"), dir.path().join("b.json"), dir.path().join("c.json"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = pmp(&["gen-data", "--seed", seed, "--set", "synth.n_clips=4", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let ds = pmp_core::motion::load_dataset(&a, &RobotModel::planar_h1()).unwrap().dataset;
    assert_eq!(ds.clips.len(), 4);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.json");
    for args in [
        vec!["frobnicate"],
        vec!["gen-data"],
        vec!["gen-data", "--out", s(&out), "--bogus"],
        vec!["gen-data", "--out", s(&out), "--set", "synth.no_such_key=1"],
        vec!["gen-data", "--out", s(&out), "--set", "no-equals-sign"],
        vec!["eval", "--out", s(&out)],
        vec!["eval", "--out", s(&out), "--policy", "p.ckpt", "--format", "xml"],
    ] {
        let o = pmp(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!o.stderr.is_empty());
    }
    assert!(!out.exists());
    assert_eq!(pmp(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.json");
    let missing = dir.path().join("missing.json");
    let o = pmp(&["gen-data", "--config", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = pmp(&["gen-data", "--out", s(&dir.path().join("no/such/dir.json"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = pmp(&["gen-data", "--out", s(&out), "--set", "synth.n_clips=\"many\""]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("data.json");
    let o = pmp(&[
        "gen-data",
        "--set",
        "synth.n_clips=3",
        "--set",
        "synth.frames_per_clip=120",
        "--out",
        s(&p),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    p
}

fn save_policy(dir: &Path, name: &str, obs_dim: usize) -> std::path::PathBuf {
    let config = PolicyConfig {
        hidden: vec![16, 16],
        ..Default::default()
    };
    let policy = Policy::<f64>::new(obs_dim, 6, 64, false, config, 1).unwrap();
    let p = dir.join(name);
    policy.to_checkpoint().save(&p).unwrap();
    p
}

#[test]
fn eval_rejects_mismatched_checkpoint_dims() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let bad = save_policy(dir.path(), "bad.ckpt", 40);
    let out = dir.path().join("r.csv");
    let o = pmp(&["eval", "--dataset", s(&data), "--policy", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("compatibility"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn eval_report_shape_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let policy = save_policy(dir.path(), "p.ckpt", 98);
    let run = |out: &Path| {
        let o = pmp(&[
            "eval",
            "--dataset",
            s(&data),
            "--policy",
            s(&policy),
            "--set",
            "eval.n_traj=2",
            "--set",
            "env.max_episode_s=1.0",
            "--out",
            s(out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(out).unwrap()
    };
    let a = run(&dir.path().join("a.csv"));
    let b = run(&dir.path().join("b.csv"));
    assert_eq!(a, b);
    let rows = rows_from_csv(&a).unwrap();
    assert_eq!(rows.len(), 3 * 2 + 3 + 1);
    assert!(rows.iter().all(|r| r.method == "no_prior"));
    assert_eq!(rows.last().unwrap().clip_id, AGGREGATE_CLIP);

    let json = dir.path().join("r.json");
    let o = pmp(&[
        "eval", "--dataset", s(&data), "--policy", s(&policy), "--format", "json",
        "--set", "eval.n_traj=1", "--set", "env.max_episode_s=0.5", "--out", s(&json),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3 + 3 + 1);
}

#[test]
fn set_overrides_config_file_and_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"ppo": {"seed": 1, "iterations": 2, "n_envs": 2, "horizon": 8, "epochs": 1, "minibatches": 1, "max_episode_s": 1.0},
            "policy": {"hidden": [8, 8]}}"#,
    )
    .unwrap();
    let train = |name: &str, extra: &[&str]| {
        let out = dir.path().join(format!("{name}.ckpt"));
        let log = dir.path().join(format!("{name}.csv"));
        let mut args = vec!["train-policy", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out), "--log", s(&log)];
        args.extend_from_slice(extra);
        let o = pmp(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(&log).unwrap()
    };
    let file_seed = train("file", &[]);
    let set_seed = train("set", &["--set", "ppo.seed=3"]);
    let flag_seed = train("flag", &["--seed", "3"]);
    let both = train("both", &["--seed", "5", "--set", "ppo.seed=3"]);
    assert_ne!(file_seed, set_seed);
    assert_eq!(set_seed, flag_seed);
    assert_eq!(set_seed, both);
    assert_eq!(set_seed.lines().count(), 3);
}
