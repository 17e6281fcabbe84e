//! Motion-prior locomotion for a planar humanoid.
//!
//! - [`motion`]: robot model, motion clips, retargeting and the synthetic dataset.
//! - [`nn`]: MLPs with hand-written backprop, Adam, parameter stores and checkpoints.
//! - [`cvae`]: the conditional VAE motion prior and its training loop.
//! - [`sim`]: planar articulated simulator with compliant ground contact.
//! - [`rl`]: locomotion environment, reward, curriculum, GAE and PPO.
//! - [`eval`]: metrics, evaluation protocol, robustness sweeps and reports.
//!
//! Numerical types are generic over [`Real`]; the aliases below fix the scalar to `f64`,
//! which is what training and evaluation use.

pub mod cvae;
pub mod error;
pub mod eval;
pub mod motion;
pub mod nn;
pub mod rl;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub type CvaeModelF64 = cvae::CvaeModel<f64>;
pub type PolicyF64 = rl::Policy<f64>;
pub type SimulatorF64 = sim::Simulator<f64>;
pub type SimStateF64 = sim::SimState<f64>;
pub type ParamStoreF64 = nn::ParamStore<f64>;
pub type GaussianF64 = nn::GaussianParams<f64>;
