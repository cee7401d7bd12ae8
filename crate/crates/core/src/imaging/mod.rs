//! Undersampled Fourier measurement model: sampling masks, the masked
//! unitary DFT and complex Gaussian measurement noise.

mod mask;
mod noise;
mod operator;

pub use mask::{cartesian_mask, poisson_disc_mask, SamplingMask, DEFAULT_CALIBRATION_FRACTION};
pub use noise::{add_noise, realized_snr_db, NoiseModel};
pub use operator::{ChannelMode, MriOperator};
