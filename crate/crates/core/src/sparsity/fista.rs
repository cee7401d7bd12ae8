use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prox::tv_prox;
use super::tv::{tv, TvConfig};
use crate::error::{Error, Result};
use crate::imaging::MriOperator;
use crate::numerics::{ComplexTensor, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FistaConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when the relative loss decrease over one accepted step is below this.
    pub tol: f64,
    pub tv: TvConfig,
    pub power_iters: usize,
}

impl Default for FistaConfig {
    fn default() -> Self {
        FistaConfig { lambda: 1e-3, max_iters: 300, tol: 1e-10, tv: TvConfig::default(), power_iters: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct FistaResult {
    pub image: Tensor,
    /// Objective after every iteration, starting with the initial point.
    pub losses: Vec<f64>,
    pub restarts: usize,
    pub lipschitz: f64,
}

fn objective(op: &MriOperator, g: &ComplexTensor, f: &Tensor, lambda: f64) -> Result<f64> {
    let r = op.apply(f)?.sub(g)?;
    Ok(r.norm_sqr() + lambda * tv(f))
}

/// Minimises `‖g - H f‖² + λ tv(f)` by FISTA with step `1/Lip`,
/// `Lip = 2‖H‖²`. A step that would increase the objective is rejected and
/// the momentum reset, so the recorded losses never increase.
pub fn fista_pls_tv(op: &MriOperator, g: &ComplexTensor, cfg: &FistaConfig) -> Result<FistaResult> {
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", cfg.lambda)));
    }
    cfg.tv.validate()?;
    let lip = 2.0 * op.norm_sq_estimate(cfg.power_iters, &mut ChaCha8Rng::seed_from_u64(0x9e37))?;
    if !(lip > 0.0) {
        return Err(Error::DegenerateSignal("operator norm estimate is zero".into()));
    }
    let mut x = op.adjoint(g)?;
    let mut loss = objective(op, g, &x, cfg.lambda)?;
    if !loss.is_finite() {
        return Err(Error::numeric("fista loss", 0));
    }
    let mut losses = vec![loss];
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut dual: Option<Vec<f64>> = None;
    let mut restarts = 0;
    for it in 1..=cfg.max_iters {
        let grad = op.adjoint(&op.apply(&y)?.sub(g)?)?.scale(2.0);
        let step = y.sub(&grad.scale(1.0 / lip))?;
        let prox = tv_prox(&step, cfg.lambda / lip, &cfg.tv, dual.as_deref())?;
        dual = Some(prox.dual);
        let z = prox.x;
        let z_loss = objective(op, g, &z, cfg.lambda)?;
        if !z_loss.is_finite() {
            return Err(Error::numeric("fista loss", it));
        }
        if z_loss <= loss {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = z.add(&z.sub(&x)?.scale(beta))?;
            let decrease = loss - z_loss;
            x = z;
            loss = z_loss;
            t = t_next;
            losses.push(loss);
            if decrease <= cfg.tol * loss.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        } else {
            restarts += 1;
            losses.push(loss);
            if t == 1.0 {
                // Already restarted from x and still no progress.
                break;
            }
            y = x.clone();
            t = 1.0;
        }
    }
    Ok(FistaResult { image: x, losses, restarts, lipschitz: lip })
}
