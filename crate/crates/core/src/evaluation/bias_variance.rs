use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{add_noise, MriOperator, NoiseModel};
use crate::numerics::{ComplexTensor, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasVarianceResult {
    pub mu: f64,
    pub realizations: usize,
    /// Pixelwise mean estimate minus truth.
    pub bias: Vec<f64>,
    /// Pixelwise unbiased sample variance.
    pub variance: Vec<f64>,
    pub avg_sq_bias: f64,
    pub avg_variance: f64,
}

/// Seed of stream `index` derived from a master seed (splitmix64 finaliser).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// For each `mu`, reconstructs `realizations` noisy measurements of `truth`
/// and reports pixelwise bias and variance. Noise realization `i` uses the
/// same seed for every `mu`. A failed reconstruction aborts only its `mu`.
pub fn bias_variance<F>(
    recon: F,
    truth: &Tensor,
    op: &MriOperator,
    noise: &NoiseModel,
    realizations: usize,
    mus: &[f64],
    seed: u64,
) -> Result<Vec<(f64, Result<BiasVarianceResult>)>>
where
    F: Fn(&ComplexTensor, f64) -> Result<Tensor> + Sync,
{
    if realizations < 2 {
        return Err(Error::Config(format!("need at least 2 noise realizations, got {realizations}")));
    }
    let clean = op.apply(truth)?;
    let measurements: Vec<ComplexTensor> = (0..realizations)
        .map(|i| add_noise(&clean, op.mask(), noise, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64))))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(mus.len());
    for &mu in mus {
        let estimates: Vec<Result<Tensor>> = measurements.par_iter().map(|g| recon(g, mu)).collect();
        out.push((mu, summarize(mu, truth, estimates)));
    }
    Ok(out)
}

fn summarize(mu: f64, truth: &Tensor, estimates: Vec<Result<Tensor>>) -> Result<BiasVarianceResult> {
    let n = truth.len();
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let d = estimates.len();
    for (k, est) in estimates.into_iter().enumerate() {
        let est = est?;
        if est.len() != n {
            return Err(Error::Dimension(format!("estimate has {} pixels, truth {n}", est.len())));
        }
        // Welford: identical estimates leave m2 exactly zero.
        for (j, &x) in est.data().iter().enumerate() {
            let delta = x - mean[j];
            mean[j] += delta / (k + 1) as f64;
            m2[j] += delta * (x - mean[j]);
        }
    }
    let bias: Vec<f64> = mean.iter().zip(truth.data()).map(|(m, t)| m - t).collect();
    let variance: Vec<f64> = m2.iter().map(|v| v / (d - 1) as f64).collect();
    let avg_sq_bias = bias.iter().map(|b| b * b).sum::<f64>() / n as f64;
    let avg_variance = variance.iter().sum::<f64>() / n as f64;
    Ok(BiasVarianceResult { mu, realizations: d, bias, variance, avg_sq_bias, avg_variance })
}
