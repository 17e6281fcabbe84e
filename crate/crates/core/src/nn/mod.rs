//! Dense-network numerical core: parameter stores, MLPs with exact reverse passes,
//! an adaptive-moment optimizer, Gaussian heads, finite-difference checks and the
//! checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
pub mod mlp;
pub mod params;

pub use adam::{clip_grad_norm, AdamConfig, OptimizerState};
pub use checkpoint::Checkpoint;
pub use gaussian::{
    clamp_log_sigma, gaussian_reparam_backward, gaussian_reparam_sample, GaussianParams,
    LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use mlp::{Activation, Mlp, MlpConfig, MlpGradients, Tape};
pub use params::{ParamStore, Tensor};
