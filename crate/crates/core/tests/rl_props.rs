use std::sync::Arc;

use pmp_core::motion::{generate_synthetic_dataset, MotionDataset, RobotModel, SynthSpec};
use pmp_core::nn::{finite_diff_check, Checkpoint};
use pmp_core::rl::*;
use pmp_core::sim::{BasePose, BaseVel, SimState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force advantages: explicit discounted sums of TD residuals up to the next done.
fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], g: f64, l: f64) -> Vec<f64> {
    let t_len = r.len();
    (0..t_len)
        .map(|t| {
            let mut a = 0.0;
            let mut w = 1.0;
            for k in t..t_len {
                let next = if d[k] { 0.0 } else { v[k + 1] };
                a += w * (r[k] + g * next - v[k]);
                if d[k] {
                    break;
                }
                w *= g * l;
            }
            a
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gae_matches_brute_force(
        seed in any::<u64>(),
        t_len in 1usize..=32,
        gamma in 0.5f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..=t_len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..t_len).map(|_| rng.random::<f64>() < 0.15).collect();
        let out = gae(&r, &v, &d, gamma, lambda).unwrap();
        let oracle = gae_oracle(&r, &v, &d, gamma, lambda);
        for t in 0..t_len {
            prop_assert!((out.advantages[t] - oracle[t]).abs() <= 1e-10);
            prop_assert!((out.returns[t] - (oracle[t] + v[t])).abs() <= 1e-10);
        }
    }

    #[test]
    fn observation_length_formula(n_lower in 1usize..12, n_upper in 1usize..12, h in 0usize..80, phase in 0.0f64..1.0) {
        let n = n_lower + n_upper;
        let state = SimState {
            base: BasePose { x: 0.0, z: 1.0, pitch: 0.3 },
            base_vel: BaseVel { vx: 0.1, vz: 0.0, pitch_rate: 0.2 },
            q: (0..n).map(|i| i as f64 * 1.7).collect(),
            qdot: vec![0.5; n],
            foot_contact: vec![true, false],
            time: 0.0,
        };
        let cmd = Command { vx: 0.2, h: 0.6, pitch: 0.0 };
        let obs = build_observation(&state, &cmd, phase, &vec![0.0; h], &vec![0.0; n_lower], &ObsScales::default());
        prop_assert_eq!(obs.len(), observation_len(n_lower, n_upper, h));
        prop_assert!(obs[..n].iter().all(|a| *a > -std::f64::consts::PI && *a <= std::f64::consts::PI));
    }

    #[test]
    fn curriculum_update_is_monotone_in_survival(alpha in 0.1f64..=1.0, s_hi in 0.9f64..=1.0, s_lo in 0.0f64..0.9) {
        let up = curriculum_update(alpha, s_hi, 0.1);
        let down = curriculum_update(alpha, s_lo, 0.1);
        prop_assert!(up >= down);
        prop_assert!((0.1..=1.0).contains(&up) && (0.1..=1.0).contains(&down));
    }

    #[test]
    fn curriculum_target_is_affine(q0 in -2.0f64..2.0, qt in -2.0f64..2.0, a in 0.0f64..=1.0) {
        let at = |x: f64| curriculum_target(&[q0], &[qt], x)[0];
        prop_assert_eq!(at(0.0), q0);
        prop_assert!((at(1.0) - qt).abs() <= 1e-15);
        // collinearity of (0, f0), (a, fa), (1, f1)
        let (f0, fa, f1) = (at(0.0), at(a), at(1.0));
        prop_assert!((fa - (f0 + a * (f1 - f0))).abs() <= 1e-12);
    }

    #[test]
    fn mean_alpha_never_drops_when_every_episode_survives(
        updates in proptest::collection::vec((0usize..5, 0.9f64..=1.0), 1..40),
    ) {
        let robot = RobotModel::planar_h1();
        let ds = generate_synthetic_dataset(&SynthSpec { n_clips: 5, frames_per_clip: 20, ..Default::default() }, 0, &robot);
        let mut cur = CurriculumState::new(&ds, 0.1, 0.1);
        let mut prev = cur.mean();
        for (clip, s) in updates {
            cur.update(&ds.clips[clip].id, s);
            prop_assert!(cur.mean() >= prev);
            prev = cur.mean();
        }
    }
}

fn tiny_policy(seed: u64) -> Policy<f64> {
    let config = PolicyConfig {
        hidden: vec![8, 8],
        ..Default::default()
    };
    Policy::new(10, 3, 0, false, config, seed).unwrap()
}

struct TinyBatch {
    obs: Vec<f64>,
    actions: Vec<f64>,
    old_lp: Vec<f64>,
    adv: Vec<f64>,
    ret: Vec<f64>,
}

impl TinyBatch {
    fn view(&self) -> PpoBatch<'_> {
        PpoBatch {
            obs: &self.obs,
            actions: &self.actions,
            old_log_probs: &self.old_lp,
            advantages: &self.adv,
            returns: &self.ret,
        }
    }
}

/// Ratios spread on both sides of the clip range.
fn tiny_batch(policy: &Policy<f64>, n: usize, seed: u64) -> TinyBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs: Vec<f64> = (0..n * 10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fwd = policy.forward_batch(&obs, n).unwrap();
    let mut actions = Vec::new();
    let mut old_lp = Vec::new();
    for i in 0..n {
        let m = &fwd.mean[i * 3..(i + 1) * 3];
        let a: Vec<f64> = m.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect();
        old_lp.push(gaussian_log_prob(m, &fwd.log_std, &a) + rng.random_range(-0.5..0.5));
        actions.extend(a);
    }
    TinyBatch {
        obs,
        actions,
        old_lp,
        adv: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        ret: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
    }
}

#[test]
fn ppo_loss_gradient_matches_finite_differences() {
    let policy = tiny_policy(1);
    let batch = tiny_batch(&policy, 12, 2);
    let config = PpoConfig::default();
    let out = ppo_loss(&policy, &batch.view(), &config).unwrap();
    assert!(out.stats.clip_frac > 0.0 && out.stats.clip_frac < 1.0, "{}", out.stats.clip_frac);
    let mut probe = policy.clone();
    let report = finite_diff_check(
        |p| {
            probe.set_params(p.clone()).unwrap();
            let o = ppo_loss(&probe, &batch.view(), &config).unwrap();
            (o.loss, o.grads)
        },
        &policy.params,
        1e-6,
    );
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn zero_advantages_leave_no_policy_gradient_on_the_actor() {
    let policy = tiny_policy(3);
    let mut batch = tiny_batch(&policy, 9, 4);
    batch.adv.iter_mut().for_each(|a| *a = 0.0);
    let out = ppo_loss(&policy, &batch.view(), &PpoConfig::default()).unwrap();
    assert_eq!(out.stats.policy_loss, 0.0);
    for (name, t) in out.grads.iter() {
        if name.starts_with("actor.") {
            assert!(t.values.iter().all(|g| *g == 0.0), "{name}");
        }
    }
    let critic_moves = out
        .grads
        .iter()
        .any(|(n, t)| n.starts_with("critic.") && t.values.iter().any(|g| *g != 0.0));
    assert!(critic_moves);
}

#[test]
fn clip_fraction_stays_in_unit_interval() {
    let policy = tiny_policy(5);
    for seed in 0..20 {
        let batch = tiny_batch(&policy, 7, seed);
        let f = ppo_loss(&policy, &batch.view(), &PpoConfig::default()).unwrap().stats.clip_frac;
        assert!((0.0..=1.0).contains(&f));
    }
}

fn small_dataset(robot: &RobotModel) -> Arc<MotionDataset> {
    let spec = SynthSpec {
        n_clips: 4,
        frames_per_clip: 150,
        ..Default::default()
    };
    Arc::new(generate_synthetic_dataset(&spec, 0, robot))
}

#[test]
fn zero_policy_stands_through_the_episode() {
    let robot = RobotModel::planar_h1();
    let ds = small_dataset(&robot);
    let mut env = LocoEnv::new(robot.clone(), EnvConfig::default(), ds.clone(), None).unwrap();
    for clip in 0..ds.clips.len() {
        let setup = EpisodeSetup {
            clip,
            command: Command::standing(&robot),
            speed_factor: 1.0,
            alpha: 0.0,
            push: None,
            seed: clip as u64,
        };
        let r = run_episode(&mut env, &setup, ActionSource::Zero).unwrap();
        assert!(r.survival_fraction >= 0.9, "clip {clip}: {}", r.survival_fraction);
    }
}

fn smoke_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.ppo.iterations = 2;
    c.ppo.n_envs = 3;
    c.ppo.horizon = 16;
    c.ppo.max_episode_s = 0.5;
    c.ppo.seed = seed;
    c.policy.hidden = vec![32, 32];
    c
}

#[test]
fn training_is_deterministic_and_checkpoints_load() {
    let robot = RobotModel::planar_h1();
    let ds = small_dataset(&robot);
    let a = train_policy(&robot, ds.clone(), None, &smoke_config(7)).unwrap();
    let b = train_policy(&robot, ds.clone(), None, &smoke_config(7)).unwrap();
    assert_eq!(log_to_csv(&a.log), log_to_csv(&b.log));
    assert_eq!(a.log.len(), 2);
    assert!(log_to_csv(&a.log).starts_with(LOG_HEADER));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ckpt");
    a.policy.to_checkpoint().save(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.meta_str("kind"), Some("policy"));
    assert_eq!(ckpt.meta_usize("obs_dim").unwrap(), 98);
    assert_eq!(ckpt.meta_usize("act_dim").unwrap(), 6);
    assert_eq!(ckpt.meta_usize("H").unwrap(), 64);
    let back = Policy::<f64>::from_checkpoint(&ckpt).unwrap();
    let obs = vec![0.05; 98];
    assert_eq!(back.forward(&obs).unwrap().mean.len(), 6);
}

#[test]
fn ablation_keeps_the_observation_layout() {
    use pmp_core::cvae::{CvaeConfig, CvaeModel};
    let robot = RobotModel::planar_h1();
    let ds = small_dataset(&robot);
    let cvae = CvaeModel::<f64>::new(
        CvaeConfig {
            hidden: vec![16, 16],
            ..Default::default()
        },
        robot.n_upper(),
        0,
    )
    .unwrap();
    let mut with = LocoEnv::new(robot.clone(), EnvConfig::default(), ds.clone(), Some(Arc::new(cvae))).unwrap();
    let mut without = LocoEnv::new(robot.clone(), EnvConfig::default(), ds, None).unwrap();
    let setup = EpisodeSetup {
        clip: 0,
        command: Command::standing(&robot),
        speed_factor: 1.0,
        alpha: 1.0,
        push: None,
        seed: 0,
    };
    for env in [&mut with, &mut without] {
        env.reset(&setup).unwrap();
        for _ in 0..40 {
            env.step(&[0.0; 6]).unwrap();
        }
    }
    assert_eq!(with.obs_dim(), without.obs_dim());
    let (a, b) = (with.observation(), without.observation());
    let h = with.latent_dim();
    let k = a.len() - h;
    assert_eq!(a[..k], b[..k]);
    assert!(b[k..].iter().all(|z| *z == 0.0));
    assert!(a[k..].iter().any(|z| *z != 0.0));

    // a policy trained without the prior is rejected by a prior-conditioned env
    let p = Policy::<f64>::new(98, 6, 64, false, PolicyConfig::default(), 0).unwrap();
    assert!(matches!(with.check_policy(&p), Err(pmp_core::Error::Compatibility(_))));
}
