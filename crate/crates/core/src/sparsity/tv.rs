use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvConfig {
    /// Smoothing of `|d|` as `sqrt(d² + ε²)`.
    pub epsilon: f64,
    pub prox_max_iters: usize,
    /// Stop when the relative change of the dual variable falls below this.
    pub prox_tol: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig { epsilon: 1e-6, prox_max_iters: 100, prox_tol: 1e-8 }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("TV smoothing must be positive, got {}", self.epsilon)));
        }
        if self.prox_max_iters == 0 || !(self.prox_tol >= 0.0) {
            return Err(Error::Config("TV prox needs a positive iteration cap and non-negative tolerance".into()));
        }
        Ok(())
    }
}

/// Visits every finite difference as `(index of x[i,j], index of the
/// neighbour)`: per pixel in raster order, first the horizontal then the
/// vertical one, channel by channel.
pub(crate) fn for_each_diff(h: usize, w: usize, c: usize, mut visit: impl FnMut(usize, usize)) {
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let here = (i * w + j) * c + ch;
                if j + 1 < w {
                    visit(here, here + c);
                }
                if i + 1 < h {
                    visit(here, here + w * c);
                }
            }
        }
    }
}

fn dims(f: &Tensor) -> (usize, usize, usize) {
    f.dims3().unwrap_or((1, f.len(), 1))
}

/// Anisotropic TV `Σ |x[i,j] - x[i,j+1]| + |x[i,j] - x[i+1,j]|`, summed over
/// channels, with no differences across the border.
pub fn tv(f: &Tensor) -> f64 {
    let (h, w, c) = dims(f);
    let x = f.data();
    let mut s = 0.0;
    for_each_diff(h, w, c, |a, b| s += (x[a] - x[b]).abs());
    s
}

/// Smoothed TV `Σ sqrt(d² + ε²)`.
pub fn tv_smooth(f: &Tensor, epsilon: f64) -> f64 {
    let (h, w, c) = dims(f);
    let x = f.data();
    let e2 = epsilon * epsilon;
    let mut s = 0.0;
    for_each_diff(h, w, c, |a, b| {
        let d = x[a] - x[b];
        s += (d * d + e2).sqrt();
    });
    s
}

/// Gradient of [`tv_smooth`].
pub fn tv_grad(f: &Tensor, cfg: &TvConfig) -> Tensor {
    let (h, w, c) = dims(f);
    let x = f.data();
    let e2 = cfg.epsilon * cfg.epsilon;
    let mut g = Tensor::zeros(f.shape());
    let gd = g.data_mut();
    for_each_diff(h, w, c, |a, b| {
        let d = x[a] - x[b];
        let s = d / (d * d + e2).sqrt();
        gd[a] += s;
        gd[b] -= s;
    });
    g
}
