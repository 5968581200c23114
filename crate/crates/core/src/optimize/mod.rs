//! Losses, Adam, and per-scene fitting for the three rotation
//! parameterizations.

mod adam;
mod fit;
mod loss;

pub use adam::{adam_step, AdamState, LearningRates, BETA1, BETA2, EPSILON};
pub use fit::{
    encode_normals, evaluate, fit, fit_from, initial_field, normal_errors_deg, EvalMetrics, FitConfig, FitResult,
    IterationMetrics, INITIAL_OPACITY, NORMAL_LR_FINAL_RATIO, NORMAL_STAGE_OPACITY,
};
pub(crate) use fit::random_quaternion;
pub use loss::{l1_loss, mse, photometric_loss, psnr, psnr_from_mse, ssim, ssim_kernel, ssim_value, PSNR_CAP};
