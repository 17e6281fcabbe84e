use pmp_core::cvae::{
    kl_diag_gaussians, pmp_latent, train_cvae, CvaeConfig, CvaeModel, MotionRing, PairSet,
};
use pmp_core::motion::{generate_synthetic_dataset, window_pairs, MotionFamily, RobotModel, SynthSpec};
use pmp_core::nn::{finite_diff_check, GaussianParams, ParamStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(dim: usize) -> impl Strategy<Value = GaussianParams<f64>> {
    (
        prop::collection::vec(-3.0..3.0f64, dim),
        prop::collection::vec(-5.0..2.0f64, dim),
    )
        .prop_map(|(mu, ls)| GaussianParams::new(mu, ls).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn kl_is_non_negative((q, p) in (1usize..8).prop_flat_map(|d| (gaussian(d), gaussian(d)))) {
        prop_assert!(kl_diag_gaussians(&q, &p).unwrap() >= -1e-12);
    }
}

/// Monte-Carlo estimate of `E_q[log q - log p]` with its standard error.
fn kl_monte_carlo(q: &GaussianParams<f64>, p: &GaussianParams<f64>, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let mut v = 0.0;
        for i in 0..q.dim() {
            let e: f64 = StandardNormal.sample(rng);
            let x = q.mu[i] + q.log_sigma[i].exp() * e;
            let zp = (x - p.mu[i]) / p.log_sigma[i].exp();
            v += -0.5 * e * e - q.log_sigma[i] + 0.5 * zp * zp + p.log_sigma[i];
        }
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let mk = |rng: &mut ChaCha8Rng| {
            GaussianParams::new(
                (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..16).map(|_| rng.random_range(-0.7..0.5)).collect(),
            )
            .unwrap()
        };
        let q = mk(&mut rng);
        let p = mk(&mut rng);
        let exact = kl_diag_gaussians(&q, &p).unwrap();
        let (est, se) = kl_monte_carlo(&q, &p, 100_000, &mut rng);
        assert!((exact - est).abs() < 3.0 * se, "exact {exact} mc {est} se {se}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn elbo_gradients_match_finite_differences(seed in 0u64..1000, beta in 0.0..2.0f64) {
        let cfg = CvaeConfig { window: 4, latent_dim: 3, hidden: vec![5, 4], kl_weight: beta, ..CvaeConfig::default() };
        let model = CvaeModel::<f64>::new(cfg, 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m1: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let report = finite_diff_check(
            |p: &ParamStore<f64>| {
                let mut m = model.clone();
                m.set_merged_params(p).unwrap();
                let out = m.elbo_loss(&m0, &m1, &noise).unwrap();
                let mut g = ParamStore::new();
                g.merge_prefixed("prior.", &out.grads.prior).unwrap();
                g.merge_prefixed("encoder.", &out.grads.encoder).unwrap();
                g.merge_prefixed("decoder.", &out.grads.decoder).unwrap();
                (out.loss, g)
            },
            &model.merged_params(),
            1e-5,
        );
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }
}

fn small_dataset() -> pmp_core::motion::MotionDataset {
    let robot = RobotModel::planar_h1();
    let spec = SynthSpec {
        n_clips: 6,
        frames_per_clip: 120,
        ..SynthSpec::default()
    };
    generate_synthetic_dataset(&spec, 1, &robot)
}

fn small_config() -> CvaeConfig {
    CvaeConfig {
        window: 20,
        latent_dim: 8,
        hidden: vec![32, 32],
        epochs: 12,
        batch_size: 16,
        stride: 4,
        ..CvaeConfig::default()
    }
}

#[test]
fn training_is_deterministic_in_seed() {
    let ds = small_dataset();
    let cfg = CvaeConfig {
        epochs: 3,
        ..small_config()
    };
    let a = train_cvae(&ds, &cfg).unwrap();
    let b = train_cvae(&ds, &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.model.merged_params(), b.model.merged_params());
}

#[test]
fn training_without_kl_reduces_reconstruction() {
    let ds = small_dataset();
    let cfg = CvaeConfig {
        kl_weight: 0.0,
        augment: false,
        ..small_config()
    };
    let out = train_cvae(&ds, &cfg).unwrap();
    let curve: Vec<f64> = out.loss_curve.iter().map(|s| s.recon).collect();
    for w in curve.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{curve:?}");
    }
    assert!(curve.last().unwrap() < &curve[0]);
}

#[test]
fn empty_pair_set_is_a_dataset_error() {
    let ds = small_dataset();
    let cfg = CvaeConfig {
        window: 61,
        ..small_config()
    };
    assert!(matches!(train_cvae(&ds, &cfg), Err(pmp_core::Error::Dataset(_))));
}

#[test]
fn trained_model_is_sensitive_to_its_inputs() {
    let robot = RobotModel::planar_h1();
    let spec = SynthSpec {
        n_clips: 9,
        frames_per_clip: 200,
        ..SynthSpec::default()
    };
    let ds = generate_synthetic_dataset(&spec, 2, &robot);
    let cfg = CvaeConfig {
        window: 25,
        latent_dim: 16,
        hidden: vec![64, 64],
        epochs: 10,
        kl_weight: 0.01,
        ..CvaeConfig::default()
    };
    let out = train_cvae(&ds, &cfg).unwrap();
    let model = &out.model;
    let wave = ds.clips.iter().find(|c| c.id.starts_with(MotionFamily::Wave.tag())).unwrap();
    let pairs = window_pairs(wave, 25, 1);
    let (a, b) = (&pairs[0], &pairs[pairs.len() - 1]);

    let e1 = model.encoder_forward(&a.m0, &a.m1).unwrap();
    let e2 = model.encoder_forward(&a.m0, &b.m1).unwrap();
    assert_ne!(e1.mu, e2.mu);

    let z2: Vec<f64> = e1.mu.iter().map(|v| v + 1.0).collect();
    assert_ne!(
        model.decoder_forward(&e1.mu, &a.m0).unwrap(),
        model.decoder_forward(&z2, &a.m0).unwrap()
    );

    let mut moving = MotionRing::filled(25, &robot.q0_upper());
    for k in 0..25 {
        moving.push(b.m0_frame(k));
    }
    let still = MotionRing::filled(25, &robot.q0_upper());
    let zm = pmp_latent(model, &moving).unwrap();
    let zs = pmp_latent(model, &still).unwrap();
    assert_eq!(zs, pmp_latent(model, &still).unwrap());
    let dist: f64 = zm.iter().zip(&zs).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 1e-3, "{dist}");

    let train = PairSet::from_clips(out.train_clips.iter().filter_map(|id| ds.clip(id)), 25, 2);
    assert!(pmp_core::cvae::pair_set_mse(model, &train).unwrap().is_finite());
}

#[test]
fn checkpoint_file_round_trip() {
    let model = CvaeModel::<f64>::new(small_config(), 4, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cvae.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let ckpt = pmp_core::nn::Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.meta["kind"], "cvae");
    assert_eq!(ckpt.meta["W"], 20);
    assert_eq!(ckpt.meta["H"], 8);
    assert_eq!(ckpt.meta["n_upper"], 4);
    let back = CvaeModel::<f64>::from_checkpoint(&ckpt).unwrap();
    let ring = MotionRing::filled(20, &[0.1, 0.2, 0.3, 0.4]);
    let (a, b) = (pmp_latent(&model, &ring).unwrap(), pmp_latent(&back, &ring).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-4));
}
