use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SamplingMask;
use crate::error::{Error, Result};
use crate::numerics::{Complex64, ComplexTensor};

/// Circular complex Gaussian noise at a per-sample SNR relative to the mean
/// power of the sampled measurements. An infinite SNR means noiseless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub snr_db: f64,
}

impl NoiseModel {
    pub fn new(snr_db: f64) -> Self {
        NoiseModel { snr_db }
    }

    pub fn noiseless() -> Self {
        NoiseModel { snr_db: f64::INFINITY }
    }

    /// Total complex noise variance for a signal of the given mean power.
    pub fn variance(&self, signal_power: f64) -> f64 {
        signal_power * 10f64.powf(-self.snr_db / 10.0)
    }
}

fn sampled_power(g: &ComplexTensor, mask: &SamplingMask) -> Result<f64> {
    if g.len() != mask.bits().len() {
        return Err(Error::Dimension(format!("measurement has {} entries, mask {}", g.len(), mask.bits().len())));
    }
    let (sum, count) = g
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v.norm_sqr(), n + 1));
    Ok(sum / count as f64)
}

/// Adds noise to the sampled entries of `g`; unsampled entries are untouched.
pub fn add_noise(g: &ComplexTensor, mask: &SamplingMask, model: &NoiseModel, rng: &mut impl Rng) -> Result<ComplexTensor> {
    let power = sampled_power(g, mask)?;
    if model.snr_db == f64::INFINITY {
        return Ok(g.clone());
    }
    if !model.snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite or +inf, got {}", model.snr_db)));
    }
    if power == 0.0 {
        return Err(Error::DegenerateSignal("measurement has zero power; SNR is undefined".into()));
    }
    let sd = (model.variance(power) / 2.0).sqrt();
    let mut out = g.clone();
    for (v, &b) in out.data_mut().iter_mut().zip(mask.bits()) {
        if b {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(sd * re, sd * im);
        }
    }
    Ok(out)
}

/// `10 log10(mean|g|² / mean|noisy - g|²)` over the sampled entries.
pub fn realized_snr_db(clean: &ComplexTensor, noisy: &ComplexTensor, mask: &SamplingMask) -> Result<f64> {
    let signal = sampled_power(clean, mask)?;
    let noise = sampled_power(&noisy.sub(clean)?, mask)?;
    Ok(10.0 * (signal / noise).log10())
}
