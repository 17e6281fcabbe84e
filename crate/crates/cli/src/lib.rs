//! The `pmp` command-line tool: dataset generation, motion-prior and policy training,
//! evaluation, robustness sweeps and the teleoperation server.
//!
//! Every subcommand reads a JSON config (`--config`), then applies `--seed`, then
//! subcommand flags, then `--set key=value` overrides, each layer winning over the last.
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

pub mod commands;
pub mod config;
pub mod teleop;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use config::{resolve, ConfigError, Layers, SeedPath};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable holding the log filter, e.g. `PMP_LOG=debug`.
pub const LOG_ENV: &str = "PMP_LOG";

#[derive(Debug, Parser)]
#[command(name = "pmp", version, about = "Predictive motion prior locomotion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config value; VALUE is parsed as JSON, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed of this stage's random number generators.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Artifacts {
    /// Robot description JSON; the built-in planar humanoid by default.
    #[arg(long, value_name = "PATH")]
    robot: Option<PathBuf>,
    /// Motion dataset JSON; the default synthetic dataset by default.
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
    /// Motion prior checkpoint.
    #[arg(long, value_name = "PATH")]
    cvae: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a synthetic upper-body motion dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Robot description JSON; the built-in planar humanoid by default.
        #[arg(long, value_name = "PATH")]
        robot: Option<PathBuf>,
        /// Dataset file to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train the motion prior.
    TrainCvae {
        #[command(flatten)]
        common: Common,
        /// Robot description JSON; the built-in planar humanoid by default.
        #[arg(long, value_name = "PATH")]
        robot: Option<PathBuf>,
        /// Motion dataset JSON; the default synthetic dataset by default.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Per-epoch loss CSV; defaults to the checkpoint path with a `.log.csv` extension.
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
    /// Train a lower-body policy, with the motion prior if one is given.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
        /// Policy checkpoint to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Per-iteration training CSV; defaults to the checkpoint path with a `.log.csv` extension.
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
    /// Evaluate a policy on every clip and write a report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
        /// Report file to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// `csv` or `json`.
        #[arg(long)]
        format: Option<String>,
    },
    /// Sweep push strength and playback speed.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
        /// Report file to write.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long)]
        format: Option<String>,
    },
    /// Serve the simulated robot over WebSocket.
    TeleopServe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
        /// Address to listen on, e.g. 127.0.0.1:8765.
        #[arg(long)]
        bind: Option<String>,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn artifact_flags(a: &Artifacts) -> Vec<(&'static str, Value)> {
    let mut flags = Vec::new();
    if let Some(p) = &a.robot {
        flags.push(("robot", path_value(p)));
    }
    if let Some(p) = &a.dataset {
        flags.push(("dataset", path_value(p)));
    }
    if let Some(p) = &a.cvae {
        flags.push(("cvae", path_value(p)));
    }
    flags
}

fn format_flag(format: &Option<String>) -> Result<Option<(&'static str, Value)>, Failure> {
    match format {
        None => Ok(None),
        Some(f) => {
            let parsed: pmp_core::eval::ReportFormat = f.parse().map_err(|e: pmp_core::Error| Failure::Usage(e.to_string()))?;
            Ok(Some(("format", serde_json::to_value(parsed).expect("format serializes"))))
        }
    }
}

fn load<T>(common: &Common, flags: Vec<(&'static str, Value)>) -> Result<T, Failure>
where
    T: Default + Serialize + DeserializeOwned + SeedPath,
{
    let layers = Layers {
        file: common.config.as_deref(),
        seed: common.seed,
        flags,
        sets: &common.set,
    };
    Ok(resolve(&layers)?)
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::GenData { common, robot, out } => {
            let flags = robot.iter().map(|p| ("robot", path_value(p))).collect();
            let cfg: commands::GenDataConfig = load(&common, flags)?;
            commands::gen_data(&cfg, &out)?;
        }
        Cmd::TrainCvae {
            common,
            robot,
            dataset,
            out,
            log,
        } => {
            let mut flags: Vec<_> = robot.iter().map(|p| ("robot", path_value(p))).collect();
            flags.extend(dataset.iter().map(|p| ("dataset", path_value(p))));
            let cfg: commands::TrainCvaeConfig = load(&common, flags)?;
            commands::train_cvae_cmd(&cfg, &out, log.as_deref())?;
        }
        Cmd::TrainPolicy {
            common,
            artifacts,
            out,
            log,
        } => {
            let cfg: commands::TrainPolicyConfig = load(&common, artifact_flags(&artifacts))?;
            commands::train_policy_cmd(&cfg, &out, log.as_deref())?;
        }
        Cmd::Eval {
            common,
            artifacts,
            policy,
            out,
            format,
        } => {
            let mut flags = artifact_flags(&artifacts);
            flags.extend(policy.iter().map(|p| ("policy", path_value(p))));
            flags.extend(format_flag(&format)?);
            let cfg: commands::EvalConfig = load(&common, flags)?;
            if cfg.policy.is_none() {
                return Err(Failure::Usage("eval needs a policy checkpoint (--policy)".into()));
            }
            commands::eval_cmd(&cfg, &out)?;
        }
        Cmd::Robustness {
            common,
            artifacts,
            policy,
            out,
            format,
        } => {
            let mut flags = artifact_flags(&artifacts);
            flags.extend(policy.iter().map(|p| ("policy", path_value(p))));
            flags.extend(format_flag(&format)?);
            let cfg: commands::RobustnessConfig = load(&common, flags)?;
            if cfg.policy.is_none() {
                return Err(Failure::Usage("robustness needs a policy checkpoint (--policy)".into()));
            }
            commands::robustness_cmd(&cfg, &out)?;
        }
        Cmd::TeleopServe {
            common,
            artifacts,
            policy,
            bind,
        } => {
            let mut flags = artifact_flags(&artifacts);
            flags.extend(policy.iter().map(|p| ("policy", path_value(p))));
            flags.extend(bind.map(|b| ("bind", Value::String(b))));
            let cfg: commands::TeleopConfig = load(&common, flags)?;
            if cfg.policy.is_none() {
                return Err(Failure::Usage("teleop-serve needs a policy checkpoint (--policy)".into()));
            }
            commands::teleop_cmd(&cfg)?;
        }
    }
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (including the program name), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging();
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `pmp <command> --help` for usage");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
