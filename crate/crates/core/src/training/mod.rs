//! Maximum-likelihood training of the flow on synthetic phantoms.

mod checkpoint;
mod phantom;
mod prior;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, TrainingMeta, CHECKPOINT_MAGIC,
};
pub use phantom::{gen_phantom, generate_dataset, PhantomConfig};
pub use prior::LaplacianPrior;

use crate::error::{Error, Result};
use crate::flow::MultiscaleFlow;
use crate::numerics::{AdamParams, AdamState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub adam: AdamParams,
    /// Global gradient-norm cap per step; `inf` disables clipping. A single
    /// batch far off the current model otherwise poisons Adam's second moment.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, batch_size: 16, dataset_size: 200, adam: AdamParams::default(), max_grad_norm: 1e5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.dataset_size == 0 {
            return Err(Error::Config("batch_size and dataset_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam hyperparameters {a:?}")));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(format!("max_grad_norm must be positive, got {}", self.max_grad_norm)));
        }
        Ok(())
    }
}

/// Negative log-likelihood of one image: `ln|det ∂G/∂z| - log p(z)` at `z = G⁻¹(f)`.
fn sample_nll(flow: &MultiscaleFlow, f: &Tensor) -> Result<f64> {
    Ok(-flow.log_prob(f)?)
}

/// Mean NLL over a batch.
pub fn nll(flow: &MultiscaleFlow, batch: &[Tensor]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("nll needs a non-empty batch".into()));
    }
    let per: Vec<Result<f64>> = batch.par_iter().map(|f| sample_nll(flow, f)).collect();
    let mut total = 0.0;
    for (i, v) in per.into_iter().enumerate() {
        let v = v.map_err(|e| relabel(e, i))?;
        if !v.is_finite() {
            return Err(Error::numeric("nll", i));
        }
        total += v;
    }
    Ok(total / batch.len() as f64)
}

fn relabel(e: Error, sample: usize) -> Error {
    match e {
        Error::Numeric { context, .. } => Error::Numeric { context: format!("nll of sample ({context})"), index: sample },
        other => other,
    }
}

/// Mean NLL over a batch and its gradient with respect to the flow parameters.
pub fn nll_with_grad(flow: &MultiscaleFlow, batch: &[Tensor]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("nll needs a non-empty batch".into()));
    }
    let per: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|f| {
            let (z, logdet, trace) = flow.inverse_traced(f)?;
            let value = logdet - LaplacianPrior.log_prob(z.as_slice());
            let ct_z = z.with_data(LaplacianPrior.neg_log_prob_grad(z.as_slice()))?;
            let mut grads = vec![0.0; flow.params().len()];
            flow.inverse_backward(&trace, &ct_z, 1.0, &mut grads)?;
            Ok((value, grads))
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = vec![0.0; flow.params().len()];
    for (i, r) in per.into_iter().enumerate() {
        let (v, g) = r.map_err(|e| relabel(e, i))?;
        if !v.is_finite() {
            return Err(Error::numeric("nll", i));
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("nll gradient of sample {i}"), k));
        }
        total += v;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += scale * b;
        }
    }
    Ok((total * scale, grads))
}

/// Generates the phantom dataset from `cfg.seed` and trains on it.
pub fn train(flow: &mut MultiscaleFlow, cfg: &TrainConfig, phantoms: &PhantomConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let data = generate_dataset(phantoms, cfg.dataset_size, cfg.seed);
    train_on(flow, cfg, &data)
}

fn clip_norm(mut grads: Vec<f64>, max_norm: f64) -> Vec<f64> {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    grads
}

/// Images drawn for the data-dependent initialization.
pub const DATA_INIT_SAMPLES: usize = 256;

/// Adam on the mean batch NLL with a fresh shuffle every epoch. Returns the
/// mean training NLL of each epoch.
pub fn train_on(flow: &mut MultiscaleFlow, cfg: &TrainConfig, data: &[Tensor]) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    // Shuffle stream is separate from the dataset stream.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5417_u64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    if !flow.data_initialized() {
        let mut first = order.clone();
        first.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xac7_u64));
        let init: Vec<Tensor> = first.iter().take(DATA_INIT_SAMPLES).map(|&i| data[i].clone()).collect();
        flow.initialize_from_data(&init)?;
    }
    let mut adam = AdamState::new(cfg.adam.clone(), flow.params().len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Tensor> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (value, grads) = nll_with_grad(flow, &batch)
                .map_err(|e| Error::TrainingDiverged { epoch, reason: e.to_string() })?;
            let grads = clip_norm(grads, cfg.max_grad_norm);
            adam.step(flow.params_mut().values_mut(), &grads)
                .map_err(|e| Error::TrainingDiverged { epoch, reason: e.to_string() })?;
            sum += value * batch.len() as f64;
        }
        let mean = sum / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch, reason: "epoch NLL is not finite".into() });
        }
        log::info!("epoch {epoch}: mean nll {mean:.6}");
        history.push(mean);
    }
    Ok(history)
}
