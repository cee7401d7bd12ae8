use super::tv::{for_each_diff, tv, TvConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone)]
pub struct ProxResult {
    pub x: Tensor,
    pub converged: bool,
    pub iterations: usize,
    /// Dual variable, one entry per finite difference; usable as a warm start.
    pub dual: Vec<f64>,
    /// Primal minus dual objective at the returned pair; zero at the optimum.
    pub duality_gap: f64,
}

/// `½‖x - y‖² + τ tv(x)`.
pub fn tv_prox_objective(x: &Tensor, y: &Tensor, tau: f64) -> f64 {
    let d = x.sub(y).expect("same shape");
    0.5 * d.dot(&d).unwrap() + tau * tv(x)
}

fn dims(y: &Tensor) -> (usize, usize, usize) {
    y.dims3().unwrap_or((1, y.len(), 1))
}

fn diff_count(h: usize, w: usize, c: usize) -> usize {
    c * (h * w.saturating_sub(1) + h.saturating_sub(1) * w)
}

/// `y - τ Dᵀ p`.
fn primal(y: &Tensor, tau: f64, p: &[f64], (h, w, c): (usize, usize, usize)) -> Tensor {
    let mut x = y.clone();
    let xd = x.data_mut();
    let mut k = 0;
    for_each_diff(h, w, c, |a, b| {
        xd[a] -= tau * p[k];
        xd[b] += tau * p[k];
        k += 1;
    });
    x
}

fn gap(x: &Tensor, y: &Tensor, tau: f64) -> f64 {
    // Dual objective at p is ½‖y‖² - ½‖y - τDᵀp‖² = ½‖y‖² - ½‖x‖².
    let dual = 0.5 * (y.dot(y).unwrap() - x.dot(x).unwrap());
    (tv_prox_objective(x, y, tau) - dual).max(0.0)
}

/// Proximal map of `τ tv` by fast gradient projection on the dual
/// (box-constrained, step `1/(8τ)`). `warm` optionally seeds the dual.
pub fn tv_prox(y: &Tensor, tau: f64, cfg: &TvConfig, warm: Option<&[f64]>) -> Result<ProxResult> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("prox weight must be finite and non-negative, got {tau}")));
    }
    let dims = dims(y);
    let m = diff_count(dims.0, dims.1, dims.2);
    if tau == 0.0 || m == 0 {
        return Ok(ProxResult { x: y.clone(), converged: true, iterations: 0, dual: vec![0.0; m], duality_gap: 0.0 });
    }
    let mut p = match warm {
        Some(w) if w.len() == m => w.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        Some(w) => {
            return Err(Error::Dimension(format!("warm start has {} entries, expected {m}", w.len())));
        }
        None => vec![0.0; m],
    };
    let mut r = p.clone();
    let mut t = 1.0_f64;
    let step = 1.0 / (8.0 * tau);
    let mut best = (f64::INFINITY, p.clone());
    let mut converged = false;
    let mut iterations = 0;
    let mut next = vec![0.0; m];
    for it in 1..=cfg.prox_max_iters {
        iterations = it;
        let x = primal(y, tau, &r, dims);
        let xd = x.data();
        let mut k = 0;
        for_each_diff(dims.0, dims.1, dims.2, |a, b| {
            next[k] = (r[k] + step * (xd[a] - xd[b])).clamp(-1.0, 1.0);
            k += 1;
        });
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let mut change = 0.0;
        let mut size = 0.0;
        for k in 0..m {
            let d = next[k] - p[k];
            change += d * d;
            size += next[k] * next[k];
            r[k] = next[k] + beta * d;
        }
        std::mem::swap(&mut p, &mut next);
        t = t_next;
        let xp = primal(y, tau, &p, dims);
        let obj = tv_prox_objective(&xp, y, tau);
        if obj < best.0 {
            best = (obj, p.clone());
        }
        if change.sqrt() <= cfg.prox_tol * size.sqrt().max(1e-300) {
            converged = true;
            break;
        }
    }
    // On convergence the last iterate is returned; otherwise the best seen.
    let dual = if converged { p } else { best.1 };
    let x = primal(y, tau, &dual, dims);
    let duality_gap = gap(&x, y, tau);
    Ok(ProxResult { x, converged, iterations, dual, duality_gap })
}
