use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Side of the square Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `‖a - b‖₂ / √n`.
pub fn rmse(estimate: &Tensor, truth: &Tensor) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "rmse of {:?} against {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let s: f64 = estimate.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / truth.len() as f64).sqrt())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Mean SSIM over all fully contained windows, averaged over channels,
/// with an explicit dynamic range.
pub fn ssim_with_range(a: &Tensor, b: &Tensor, range: f64) -> Result<f64> {
    let (h, w, c) = a.dims3()?;
    if b.len() != a.len() {
        return Err(Error::Dimension(format!("ssim of {:?} against {:?}", a.shape(), b.shape())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Config(format!("images of {h}x{w} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let win = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for i in 0..=h - SSIM_WINDOW {
            for j in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..SSIM_WINDOW {
                    for dj in 0..SSIM_WINDOW {
                        let k = ((i + di) * w + j + dj) * c + ch;
                        let g = win[di * SSIM_WINDOW + dj];
                        let (u, v) = (x[k], y[k]);
                        mx += g * u;
                        my += g * v;
                        xx += g * (u * u);
                        yy += g * (v * v);
                        xy += g * (u * v);
                    }
                }
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let cxy = xy - mx * my;
                total += ((2.0 * (mx * my) + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// SSIM of `estimate` against `truth`, with dynamic range `max - min` of
/// the truth (1 when the truth is constant).
pub fn ssim(estimate: &Tensor, truth: &Tensor) -> Result<f64> {
    let range = truth.max() - truth.min();
    ssim_with_range(estimate, truth, if range > 0.0 { range } else { 1.0 })
}

/// Rectangular region of interest in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Roi {
    pub fn crop(&self, f: &Tensor) -> Result<Tensor> {
        let (h, w, c) = f.dims3()?;
        if self.height == 0 || self.width == 0 || self.row + self.height > h || self.col + self.width > w {
            return Err(Error::Config(format!("region {self:?} does not fit in a {h}x{w} image")));
        }
        let mut data = Vec::with_capacity(self.height * self.width * c);
        for i in self.row..self.row + self.height {
            let start = (i * w + self.col) * c;
            data.extend_from_slice(&f.data()[start..start + self.width * c]);
        }
        Tensor::new(vec![self.height, self.width, c], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub ssim: f64,
    pub roi_rmse: Option<f64>,
    pub roi_ssim: Option<f64>,
}

impl Metrics {
    pub fn compute(estimate: &Tensor, truth: &Tensor, roi: Option<&Roi>) -> Result<Self> {
        let mut m = Metrics { rmse: rmse(estimate, truth)?, ssim: ssim(estimate, truth)?, roi_rmse: None, roi_ssim: None };
        if let Some(r) = roi {
            let (e, t) = (r.crop(estimate)?, r.crop(truth)?);
            m.roi_rmse = Some(rmse(&e, &t)?);
            m.roi_ssim = Some(ssim(&e, &t)?);
        }
        Ok(m)
    }
}
