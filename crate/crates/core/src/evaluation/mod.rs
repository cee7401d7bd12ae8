//! Image quality metrics, the noise-ensemble bias/variance study and
//! parameter grid sweeps.

mod bias_variance;
mod metrics;
mod sweep;

pub use bias_variance::{bias_variance, derive_seed, BiasVarianceResult};
pub use metrics::{rmse, ssim, ssim_with_range, Metrics, Roi, SSIM_WINDOW};
pub use sweep::{sweep, SweepResult};
