//! Configuration types and runners for each subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use log::info;
use pmp_core::cvae::{train_cvae_with, CvaeConfig, CvaeModel};
use pmp_core::eval::{
    emit_report, method_name, robustness_sweep, run_eval, EvalOptions, ReportFormat, RobustnessSpec,
};
use pmp_core::motion::{generate_synthetic_dataset, load_dataset, MotionDataset, RobotModel, SynthSpec};
use pmp_core::nn::Checkpoint;
use pmp_core::rl::{train_policy_with, write_log_csv, ActionSource, EnvConfig, LocoEnv, Policy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::SeedPath;
use crate::teleop::{serve, ServeOptions, SessionOptions, TeleopSession};

/// Seed of the synthetic dataset used when a config names no dataset file.
pub const DEFAULT_DATA_SEED: u64 = 0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    pub synth: SynthSpec,
    pub seed: u64,
    /// Robot description JSON; the built-in planar humanoid when absent.
    pub robot: Option<PathBuf>,
}

impl SeedPath for GenDataConfig {
    const SEED_PATH: &'static str = "seed";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCvaeConfig {
    pub cvae: CvaeConfig,
    pub robot: Option<PathBuf>,
    /// Motion dataset JSON; the default synthetic dataset when absent.
    pub dataset: Option<PathBuf>,
}

impl SeedPath for TrainCvaeConfig {
    const SEED_PATH: &'static str = "cvae.seed";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPolicyConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub robot: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Motion prior checkpoint; trains the no-prior ablation when absent.
    pub cvae: Option<PathBuf>,
}

impl SeedPath for TrainPolicyConfig {
    const SEED_PATH: &'static str = "ppo.seed";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub eval: EvalOptions,
    /// Must match the environment the policy was trained in.
    pub env: EnvConfig,
    pub robot: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub cvae: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub format: ReportFormat,
}

impl SeedPath for EvalConfig {
    const SEED_PATH: &'static str = "eval.seed";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub robustness: RobustnessSpec,
    pub eval: EvalOptions,
    pub env: EnvConfig,
    pub robot: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub cvae: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub format: ReportFormat,
}

impl SeedPath for RobustnessConfig {
    const SEED_PATH: &'static str = "eval.seed";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    pub bind: String,
    pub broadcast_hz: f64,
    pub session: SessionOptions,
    pub env: EnvConfig,
    pub robot: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub cvae: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        TeleopConfig {
            bind: "127.0.0.1:8765".into(),
            broadcast_hz: ServeOptions::default().broadcast_hz,
            session: SessionOptions::default(),
            env: EnvConfig::default(),
            robot: None,
            dataset: None,
            cvae: None,
            policy: None,
        }
    }
}

impl SeedPath for TeleopConfig {
    const SEED_PATH: &'static str = "session.seed";
}

pub fn load_robot(path: Option<&Path>) -> anyhow::Result<RobotModel> {
    match path {
        Some(p) => RobotModel::load(p).with_context(|| format!("loading robot {}", p.display())),
        None => Ok(RobotModel::planar_h1()),
    }
}

pub fn load_motion(path: Option<&Path>, robot: &RobotModel) -> anyhow::Result<MotionDataset> {
    match path {
        Some(p) => Ok(load_dataset(p, robot)
            .with_context(|| format!("loading dataset {}", p.display()))?
            .dataset),
        None => Ok(generate_synthetic_dataset(&SynthSpec::default(), DEFAULT_DATA_SEED, robot)),
    }
}

pub fn load_cvae(path: Option<&Path>) -> anyhow::Result<Option<CvaeModel<f64>>> {
    let Some(p) = path else {
        return Ok(None);
    };
    let ckpt = Checkpoint::load(p).with_context(|| format!("loading motion prior {}", p.display()))?;
    let model = CvaeModel::from_checkpoint(&ckpt).with_context(|| format!("motion prior {}", p.display()))?;
    Ok(Some(model))
}

pub fn load_policy(path: &Path) -> anyhow::Result<Policy<f64>> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading policy {}", path.display()))?;
    Policy::from_checkpoint(&ckpt).with_context(|| format!("policy {}", path.display()))
}

fn log_path(out: &Path, log: Option<&Path>) -> PathBuf {
    log.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("log.csv"))
}

pub fn gen_data(cfg: &GenDataConfig, out: &Path) -> anyhow::Result<()> {
    let robot = load_robot(cfg.robot.as_deref())?;
    let ds = generate_synthetic_dataset(&cfg.synth, cfg.seed, &robot);
    ds.save(out)?;
    println!("wrote {} clips to {}", ds.clips.len(), out.display());
    Ok(())
}

pub fn train_cvae_cmd(cfg: &TrainCvaeConfig, out: &Path, log: Option<&Path>) -> anyhow::Result<()> {
    let robot = load_robot(cfg.robot.as_deref())?;
    let ds = load_motion(cfg.dataset.as_deref(), &robot)?;
    let start = Instant::now();
    let result = train_cvae_with(&ds, &cfg.cvae, |e| {
        info!("epoch {} loss {:.5} recon {:.5} kl {:.5}", e.epoch, e.loss, e.recon, e.kl);
    })?;
    result.model.to_checkpoint().save(out)?;
    let mut csv = String::from("epoch,loss,recon,kl\n");
    for e in &result.loss_curve {
        csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.recon, e.kl));
    }
    let log = log_path(out, log);
    std::fs::write(&log, csv).with_context(|| format!("writing {}", log.display()))?;
    let holdout = result
        .holdout_mse
        .map_or_else(|| "n/a".to_string(), |m| format!("{m:.6}"));
    println!(
        "trained motion prior in {:.1}s: train mse {:.6}, holdout mse {holdout}; wrote {}",
        start.elapsed().as_secs_f64(),
        result.train_mse,
        out.display()
    );
    Ok(())
}

pub fn train_policy_cmd(cfg: &TrainPolicyConfig, out: &Path, log: Option<&Path>) -> anyhow::Result<()> {
    let robot = load_robot(cfg.robot.as_deref())?;
    let ds = Arc::new(load_motion(cfg.dataset.as_deref(), &robot)?);
    let cvae = load_cvae(cfg.cvae.as_deref())?.map(Arc::new);
    let start = Instant::now();
    let result = train_policy_with(&robot, ds, cvae, &cfg.train, |l| {
        info!(
            "iter {} reward {:.4} survival {:.3} alpha {:.3} kl {:.4}",
            l.iter, l.mean_reward, l.mean_survival, l.mean_alpha, l.stats.approx_kl
        );
    })?;
    result.policy.to_checkpoint().save(out)?;
    let log = log_path(out, log);
    write_log_csv(&result.log, &log)?;
    println!(
        "trained {} policy for {} iterations in {:.1}s; wrote {} and {}",
        method_name(&result.policy),
        result.log.len(),
        start.elapsed().as_secs_f64(),
        out.display(),
        log.display()
    );
    Ok(())
}

/// Artifacts shared by `eval`, `robustness` and `teleop-serve`.
pub struct Loaded {
    pub env: LocoEnv,
    pub policy: Policy<f64>,
}

pub fn load_env_and_policy(
    env_cfg: &EnvConfig,
    robot: Option<&Path>,
    dataset: Option<&Path>,
    cvae: Option<&Path>,
    policy: Option<&Path>,
) -> anyhow::Result<Loaded> {
    let Some(policy_path) = policy else {
        bail!("no policy checkpoint given (use --policy or set 'policy')");
    };
    let robot = load_robot(robot)?;
    let ds = Arc::new(load_motion(dataset, &robot)?);
    let cvae = load_cvae(cvae)?.map(Arc::new);
    let policy = load_policy(policy_path)?;
    let env = LocoEnv::new(robot, env_cfg.clone(), ds, cvae)?;
    env.check_policy(&policy)?;
    Ok(Loaded { env, policy })
}

pub fn eval_cmd(cfg: &EvalConfig, out: &Path) -> anyhow::Result<()> {
    let Loaded { mut env, policy } = load_env_and_policy(
        &cfg.env,
        cfg.robot.as_deref(),
        cfg.dataset.as_deref(),
        cfg.cvae.as_deref(),
        cfg.policy.as_deref(),
    )?;
    let method = method_name(&policy);
    let table = run_eval(&mut env, ActionSource::PolicyMean(&policy), method, &cfg.eval)?;
    let rows = table.all_rows();
    emit_report(&rows, out, cfg.format)?;
    let a = &table.aggregate.metrics;
    println!(
        "{method}: E_jpe_upper {:.5} E_vel {:.4} E_g {:.4} survival {:.3}; wrote {} rows to {}",
        a.e_jpe_upper,
        a.e_vel,
        a.e_g,
        a.survival_fraction,
        rows.len(),
        out.display()
    );
    Ok(())
}

pub fn robustness_cmd(cfg: &RobustnessConfig, out: &Path) -> anyhow::Result<()> {
    let Loaded { mut env, policy } = load_env_and_policy(
        &cfg.env,
        cfg.robot.as_deref(),
        cfg.dataset.as_deref(),
        cfg.cvae.as_deref(),
        cfg.policy.as_deref(),
    )?;
    let method = method_name(&policy);
    let report = robustness_sweep(&mut env, ActionSource::PolicyMean(&policy), method, &cfg.robustness, &cfg.eval)?;
    let mut rows = report.episodes;
    rows.extend(report.curves.iter().cloned());
    emit_report(&rows, out, cfg.format)?;
    for c in &report.curves {
        println!(
            "{method} push {:.2} speed {:.2}: E_g {:.4} survival {:.3}",
            c.push_vel, c.speed_factor, c.metrics.e_g, c.metrics.survival_fraction
        );
    }
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

pub fn teleop_cmd(cfg: &TeleopConfig) -> anyhow::Result<()> {
    if !(cfg.broadcast_hz > 0.0 && cfg.broadcast_hz.is_finite()) {
        bail!("broadcast_hz must be positive, got {}", cfg.broadcast_hz);
    }
    let Loaded { env, policy } = load_env_and_policy(
        &cfg.env,
        cfg.robot.as_deref(),
        cfg.dataset.as_deref(),
        cfg.cvae.as_deref(),
        cfg.policy.as_deref(),
    )?;
    let session = TeleopSession::new(env, policy, cfg.session.clone())?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .with_context(|| format!("binding {}", cfg.bind))?;
        let addr = listener.local_addr()?;
        println!("teleop server listening on ws://{addr}{}", crate::teleop::WS_PATH);
        serve(
            listener,
            session,
            ServeOptions {
                broadcast_hz: cfg.broadcast_hz,
            },
        )
        .await
        .context("teleop server failed")
    })
}
