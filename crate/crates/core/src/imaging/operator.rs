use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SamplingMask;
use crate::error::{Error, Result};
use crate::numerics::{fft2, ifft2, Complex64, ComplexTensor, Tensor};

/// How a real image tensor maps to the complex k-space input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Single real channel; the adjoint keeps the real part.
    Real,
    /// Channels 0 and 1 hold the real and imaginary parts.
    TwoChannel,
}

impl ChannelMode {
    pub fn channels(self) -> usize {
        match self {
            ChannelMode::Real => 1,
            ChannelMode::TwoChannel => 2,
        }
    }
}

/// `H f = mask ⊙ F f` with `F` the unitary 2-D DFT.
#[derive(Debug, Clone)]
pub struct MriOperator {
    mask: SamplingMask,
    mode: ChannelMode,
}

impl MriOperator {
    pub fn new(mask: SamplingMask, mode: ChannelMode) -> Self {
        MriOperator { mask, mode }
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    /// Shape `[h, w, c]` of images in the domain.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.mask.height(), self.mask.width(), self.mode.channels()]
    }

    pub fn measurement_shape(&self) -> [usize; 2] {
        [self.mask.height(), self.mask.width()]
    }

    fn check_image(&self, f: &Tensor) -> Result<()> {
        let [h, w, c] = self.image_shape();
        let ok = match f.shape() {
            [hh, ww] => (*hh, *ww, 1) == (h, w, c),
            [hh, ww, cc] => (*hh, *ww, *cc) == (h, w, c),
            _ => false,
        };
        if !ok {
            return Err(Error::Dimension(format!("operator expects image [{h}, {w}, {c}], got {:?}", f.shape())));
        }
        Ok(())
    }

    fn check_measurement(&self, g: &ComplexTensor) -> Result<()> {
        if g.shape() != self.measurement_shape() {
            return Err(Error::Dimension(format!(
                "operator expects measurement {:?}, got {:?}",
                self.measurement_shape(),
                g.shape()
            )));
        }
        Ok(())
    }

    fn masked(&self, mut k: ComplexTensor) -> ComplexTensor {
        for (v, &b) in k.data_mut().iter_mut().zip(self.mask.bits()) {
            if !b {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        k
    }

    pub fn apply(&self, f: &Tensor) -> Result<ComplexTensor> {
        self.check_image(f)?;
        let [h, w, _] = self.image_shape();
        let data: Vec<Complex64> = match self.mode {
            ChannelMode::Real => f.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            ChannelMode::TwoChannel => f.data().chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
        };
        Ok(self.masked(fft2(&ComplexTensor::new(vec![h, w], data)?)?))
    }

    /// Adjoint with respect to the real inner products `⟨f, f'⟩` and `Re⟨g, g'⟩`.
    pub fn adjoint(&self, g: &ComplexTensor) -> Result<Tensor> {
        self.check_measurement(g)?;
        let x = ifft2(&self.masked(g.clone()))?;
        let data = match self.mode {
            ChannelMode::Real => x.real(),
            ChannelMode::TwoChannel => x.data().iter().flat_map(|v| [v.re, v.im]).collect(),
        };
        Tensor::new(self.image_shape().to_vec(), data)
    }

    /// `Hᵀ H f`.
    pub fn normal(&self, f: &Tensor) -> Result<Tensor> {
        self.adjoint(&self.apply(f)?)
    }

    /// Estimate of `‖H‖²` by power iteration on `HᵀH`, inflated by 2% so it
    /// can serve as a safe Lipschitz constant.
    pub fn norm_sq_estimate(&self, iterations: usize, rng: &mut impl Rng) -> Result<f64> {
        let shape = self.image_shape();
        let mut x = Tensor::from_fn(&shape, |_| rng.sample(StandardNormal));
        let mut est = 0.0;
        for _ in 0..iterations.max(1) {
            let nrm = x.norm();
            if nrm == 0.0 {
                break;
            }
            x = x.scale(1.0 / nrm);
            let y = self.normal(&x)?;
            est = x.dot(&y)?;
            x = y;
        }
        Ok(est * 1.02)
    }
}
