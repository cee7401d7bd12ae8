use super::diffop::DiffOp;
use super::tensor::Tensor;
use crate::error::Result;

/// `ln(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Softplus;

impl DiffOp for Softplus {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softplus(x))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        x.zip_map(cotangent, |v, u| u * sigmoid_scalar(v))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sigmoid;

impl DiffOp for Sigmoid {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(sigmoid(x))
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        x.zip_map(cotangent, |v, u| {
            let s = sigmoid_scalar(v);
            u * s * (1.0 - s)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((softplus_scalar(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn softplus_large_argument() {
        // ln(1 + e^50) = 50 + ln(1 + e^-50) = 50 + 1.9287498479639178e-22
        let v = softplus_scalar(50.0);
        assert!(v.is_finite());
        assert!((v - 50.0).abs() < 1e-12);
        assert!(softplus_scalar(1000.0).is_finite());
        assert!(softplus_scalar(-1000.0) >= 0.0);
    }

    #[test]
    fn sigmoid_stays_in_open_interval() {
        for x in [-30.0, -1.0, 0.0, 1.0, 30.0] {
            let s = sigmoid_scalar(x);
            assert!(s > 0.0 && s < 1.0);
        }
    }
}
