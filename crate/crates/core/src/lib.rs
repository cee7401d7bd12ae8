//! Generative-model-constrained image reconstruction with a multiscale
//! invertible network.
//!
//! The crate trains a small Glow-style flow on synthetic phantoms and uses
//! its compressible latent space to reconstruct images from undersampled,
//! noisy Fourier measurements. Sparsity baselines (TV-regularized least
//! squares via FISTA, Haar truncation) live alongside for comparison.

pub mod error;
pub mod evaluation;
pub mod flow;
pub mod imaging;
pub mod io;
pub mod numerics;
pub mod reconstruct;
pub mod sparsity;
pub mod training;

pub use error::{CheckpointError, Error, Result};
pub use evaluation::{bias_variance, rmse, ssim, BiasVarianceResult, Metrics, SweepResult};
pub use flow::{FlowConfig, LatentVector, MultiscaleFlow};
pub use imaging::{MriOperator, NoiseModel, SamplingMask};
pub use numerics::{AdamState, ComplexTensor, Tensor};
pub use reconstruct::{inn_proj_tv, ReconConfig, ReconResult};
pub use sparsity::HaarPyramid;
pub use training::{LaplacianPrior, PhantomConfig, TrainConfig};
