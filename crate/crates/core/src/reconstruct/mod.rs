//! Reconstruction in the flow's latent space: Adam on the data-fit plus
//! smoothed-TV objective with projection onto the coarsest `k` latent
//! coordinates after every step, optional unconstrained debiasing, and the
//! latent truncation study.

mod truncation;

use serde::{Deserialize, Serialize};

pub use truncation::{haar_truncation_study, truncation_study, valid_fractions, TruncationRow};

use crate::error::{Error, Result};
use crate::flow::{LatentVector, MultiscaleFlow};
use crate::imaging::MriOperator;
use crate::numerics::{AdamParams, AdamState, ComplexTensor, Tensor};
use crate::sparsity::{tv, tv_grad, tv_smooth, TvConfig};
use crate::training::LaplacianPrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Number of trailing (coarsest) latent coordinates left free; `None`
    /// keeps the coarsest quarter.
    pub k: Option<usize>,
    /// Weight of the TV penalty.
    pub mu: f64,
    /// Weight of the negative log prior.
    pub lambda: f64,
    pub adam: AdamParams,
    pub max_iters: usize,
    /// Stop when the loss changes by less than this relative amount over `window` iterations.
    pub tol: f64,
    pub window: usize,
    pub tv_epsilon: f64,
    /// Keep every iterate in the result.
    pub record_iterates: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            k: None,
            mu: 0.0,
            lambda: 0.0,
            adam: AdamParams::with_learning_rate(1e-2),
            max_iters: 2000,
            tol: 1e-8,
            window: 25,
            tv_epsilon: 1e-6,
            record_iterates: false,
        }
    }
}

impl ReconConfig {
    pub fn resolved_k(&self, n: usize) -> usize {
        self.k.unwrap_or(n / 4)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let k = self.resolved_k(n);
        if k == 0 || k > n {
            return Err(Error::Config(format!("k = {k} must lie in 1..={n}")));
        }
        for (name, v) in [("mu", self.mu), ("lambda", self.lambda)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.tv_epsilon > 0.0) {
            return Err(Error::Config(format!("tv_epsilon must be positive, got {}", self.tv_epsilon)));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        Ok(())
    }
}

/// Keeps the last `k` canonical latent coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentProjector {
    n: usize,
    k: usize,
}

impl LatentProjector {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("k = {k} must lie in 1..={n}")));
        }
        Ok(LatentProjector { n, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The 0/1 mask `p`.
    pub fn mask(&self) -> Vec<f64> {
        (0..self.n).map(|i| if i < self.n - self.k { 0.0 } else { 1.0 }).collect()
    }

    pub fn apply(&self, z: &mut LatentVector) -> Result<()> {
        if z.len() != self.n {
            return Err(Error::Dimension(format!("latent has {} entries, projector {}", z.len(), self.n)));
        }
        z.as_mut_slice()[..self.n - self.k].iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
}

pub fn project(z: &LatentVector, k: usize) -> Result<LatentVector> {
    let mut out = z.clone();
    LatentProjector::new(z.len(), k)?.apply(&mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// `‖g - H G(z)‖² / n`.
    pub data: f64,
    /// Exact (unsmoothed) TV of `G(z)`.
    pub tv: f64,
    /// `data + μ tv`.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub image: Tensor,
    pub latent: LatentVector,
    /// One record per iterate, starting with the initial point.
    pub losses: Vec<LossRecord>,
    pub converged: bool,
    pub iterations: usize,
    /// Every iterate when requested by the configuration.
    pub iterates: Vec<LatentVector>,
}

fn check_operator(flow: &MultiscaleFlow, op: &MriOperator, g: &ComplexTensor) -> Result<()> {
    if flow.image_shape() != op.image_shape() {
        return Err(Error::Dimension(format!(
            "flow images are {:?} but the operator expects {:?}",
            flow.image_shape(),
            op.image_shape()
        )));
    }
    if g.shape() != op.measurement_shape() {
        return Err(Error::Dimension(format!(
            "measurement is {:?}, operator produces {:?}",
            g.shape(),
            op.measurement_shape()
        )));
    }
    Ok(())
}

fn record(op: &MriOperator, g: &ComplexTensor, f: &Tensor, mu: f64) -> Result<LossRecord> {
    let data = op.apply(f)?.sub(g)?.norm_sqr() / f.len() as f64;
    let t = tv(f);
    Ok(LossRecord { data, tv: t, total: data + mu * t })
}

/// `‖g - H G(z)‖² / n + μ tv(G(z))` with the exact TV.
pub fn loss_total(flow: &MultiscaleFlow, op: &MriOperator, g: &ComplexTensor, z: &LatentVector, mu: f64) -> Result<f64> {
    check_operator(flow, op, g)?;
    let (f, _) = flow.forward(z)?;
    Ok(record(op, g, &f, mu)?.total)
}

/// Value and latent gradient of the optimised objective
/// `‖g - H G(z)‖² / n + μ tv_ε(G(z)) + λ (‖z‖₁ + n ln 2)`.
pub fn objective_and_grad(
    flow: &MultiscaleFlow,
    op: &MriOperator,
    g: &ComplexTensor,
    z: &LatentVector,
    cfg: &ReconConfig,
) -> Result<(f64, LatentVector)> {
    check_operator(flow, op, g)?;
    let (f, _, trace) = flow.forward_traced(z)?;
    let (value, grad, _) = objective_at(flow, op, g, z, &f, &trace, cfg)?;
    Ok((value, grad))
}

fn objective_at(
    flow: &MultiscaleFlow,
    op: &MriOperator,
    g: &ComplexTensor,
    z: &LatentVector,
    f: &Tensor,
    trace: &crate::flow::ForwardTrace,
    cfg: &ReconConfig,
) -> Result<(f64, LatentVector, LossRecord)> {
    let n = f.len() as f64;
    let resid = op.apply(f)?.sub(g)?;
    let data = resid.norm_sqr() / n;
    let mut ct = op.adjoint(&resid)?.scale(2.0 / n);
    let mut value = data;
    if cfg.mu > 0.0 {
        value += cfg.mu * tv_smooth(f, cfg.tv_epsilon);
        let tcfg = TvConfig { epsilon: cfg.tv_epsilon, ..Default::default() };
        ct = ct.add(&tv_grad(f, &tcfg).scale(cfg.mu))?;
    }
    let mut grad = flow.pullback(trace, &ct)?;
    if cfg.lambda > 0.0 {
        value -= cfg.lambda * LaplacianPrior.log_prob(z.as_slice());
        for (gv, s) in grad.as_mut_slice().iter_mut().zip(LaplacianPrior.neg_log_prob_grad(z.as_slice())) {
            *gv += cfg.lambda * s;
        }
    }
    let t = tv(f);
    Ok((value, grad, LossRecord { data, tv: t, total: data + cfg.mu * t }))
}

enum Mode {
    Projected(LatentProjector),
    Free,
}

struct Run {
    latents: Vec<LatentVector>,
    losses: Vec<LossRecord>,
    converged: bool,
    iterations: usize,
}

fn run_adam(
    flow: &MultiscaleFlow,
    op: &MriOperator,
    g: &ComplexTensor,
    mut z: LatentVector,
    cfg: &ReconConfig,
    mode: &Mode,
    early_stop: bool,
    keep_all: bool,
) -> Result<Run> {
    let mut adam = AdamState::new(cfg.adam, z.len());
    let mut losses = Vec::new();
    let mut latents = Vec::new();
    let mut converged = false;
    let mut i = 0;
    loop {
        let (f, _, trace) = flow.forward_traced(&z).map_err(|e| relabel(e, i))?;
        let (value, grad, rec) = objective_at(flow, op, g, &z, &f, &trace, cfg)?;
        if !value.is_finite() || !rec.total.is_finite() {
            return Err(Error::numeric("reconstruction loss", i));
        }
        losses.push(rec);
        if keep_all {
            latents.push(z.clone());
        }
        if early_stop && i >= cfg.window {
            let prev = losses[i - cfg.window].total;
            if (rec.total - prev).abs() <= cfg.tol * prev.abs() {
                converged = true;
            }
        }
        if converged || i == cfg.max_iters {
            break;
        }
        adam.step(z.as_mut_slice(), grad.as_slice())
            .map_err(|_| Error::numeric("reconstruction gradient", i))?;
        if let Mode::Projected(p) = mode {
            p.apply(&mut z)?;
        }
        i += 1;
    }
    if !keep_all {
        latents.push(z);
    }
    Ok(Run { latents, losses, converged, iterations: i })
}

fn relabel(e: Error, iteration: usize) -> Error {
    match e {
        Error::Numeric { context, .. } => Error::numeric(format!("reconstruction forward pass ({context})"), iteration),
        other => other,
    }
}

/// Latent-subspace-constrained reconstruction from `g = H f + noise`,
/// starting at `z = 0`.
pub fn inn_proj_tv(flow: &MultiscaleFlow, op: &MriOperator, g: &ComplexTensor, cfg: &ReconConfig) -> Result<ReconResult> {
    check_operator(flow, op, g)?;
    cfg.validate(flow.dim())?;
    if !flow.data_initialized() {
        log::warn!("reconstructing with an untrained flow");
    }
    let projector = LatentProjector::new(flow.dim(), cfg.resolved_k(flow.dim()))?;
    let run = run_adam(flow, op, g, flow.zero_latent(), cfg, &Mode::Projected(projector), true, cfg.record_iterates)?;
    let latent = run.latents.last().expect("at least one iterate").clone();
    let (image, _) = flow.forward(&latent)?;
    let iterates = if cfg.record_iterates { run.latents } else { Vec::new() };
    Ok(ReconResult { image, latent, losses: run.losses, converged: run.converged, iterations: run.iterations, iterates })
}

/// Runs `iters` unconstrained Adam steps from `init`. The returned iterate
/// is the one with the lowest loss among those whose data misfit
/// `‖g - H G(z)‖²` exceeds the initial one by at most 1e-8, so debiasing
/// never worsens the fit to the measurements.
pub fn debias(
    flow: &MultiscaleFlow,
    op: &MriOperator,
    g: &ComplexTensor,
    init: &ReconResult,
    mu: f64,
    iters: usize,
) -> Result<ReconResult> {
    let cfg = ReconConfig { mu, max_iters: iters, ..Default::default() };
    debias_with(flow, op, g, init, &cfg)
}

/// [`debias`] with full control over the optimiser settings; `max_iters`
/// is the fixed budget and early stopping is disabled.
pub fn debias_with(
    flow: &MultiscaleFlow,
    op: &MriOperator,
    g: &ComplexTensor,
    init: &ReconResult,
    cfg: &ReconConfig,
) -> Result<ReconResult> {
    check_operator(flow, op, g)?;
    cfg.validate(flow.dim())?;
    if cfg.max_iters == 0 {
        return Ok(init.clone());
    }
    let run = run_adam(flow, op, g, init.latent.clone(), cfg, &Mode::Free, false, true)?;
    let n = flow.dim() as f64;
    let limit = run.losses[0].data * n + 1e-8;
    let best = run
        .losses
        .iter()
        .enumerate()
        .filter(|(_, r)| r.data * n <= limit)
        .min_by(|a, b| a.1.total.total_cmp(&b.1.total))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let latent = run.latents[best].clone();
    let (image, _) = flow.forward(&latent)?;
    let iterates = if cfg.record_iterates { run.latents } else { Vec::new() };
    Ok(ReconResult { image, latent, losses: run.losses, converged: true, iterations: run.iterations, iterates })
}
