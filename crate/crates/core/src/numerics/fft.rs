use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::tensor::ComplexTensor;
use crate::error::{Error, Result};

/// Unitary 2-D DFT over the two leading axes.
pub fn fft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, FftDirection::Forward)
}

/// Inverse of [`fft2`].
pub fn ifft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x, FftDirection::Inverse)
}

fn transform(x: &ComplexTensor, direction: FftDirection) -> Result<ComplexTensor> {
    let (h, w) = match x.shape() {
        &[h, w] => (h, w),
        s => return Err(Error::Dimension(format!("fft2 expects a rank-2 tensor, got {s:?}"))),
    };
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::Dimension(format!("fft2 extents must be powers of two, got {h}x{w}")));
    }
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(w, direction);
    let col_fft = planner.plan_fft(h, direction);

    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = data[i * w + j];
        }
        col_fft.process(&mut column);
        for i in 0..h {
            data[i * w + j] = column[i];
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    for v in &mut data {
        *v *= norm;
    }
    ComplexTensor::new(vec![h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> ComplexTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexTensor::new(vec![h, w], data).unwrap()
    }

    // O(n^2) direct summation with the same unitary scaling.
    fn direct_dft(x: &ComplexTensor) -> ComplexTensor {
        let (h, w) = (x.shape()[0], x.shape()[1]);
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        acc += x.data()[i * w + j] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[u * w + v] = acc / ((h * w) as f64).sqrt();
            }
        }
        ComplexTensor::new(vec![h, w], out).unwrap()
    }

    #[test]
    fn dc_only_for_constant_input() {
        let x = ComplexTensor::new(vec![2, 2], vec![Complex64::new(1.0, 0.0); 4]).unwrap();
        let y = fft2(&x).unwrap();
        assert!((y.data()[0] - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        for v in &y.data()[1..] {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_summation() {
        let x = random(8, 8, 3);
        let fast = fft2(&x).unwrap();
        let slow = direct_dft(&x);
        assert!(fast.max_abs_diff(&slow) < 1e-10);
    }

    #[test]
    fn parseval_and_round_trip() {
        for seed in 0..10 {
            let x = random(16, 8, seed);
            let y = fft2(&x).unwrap();
            assert!((y.norm() - x.norm()).abs() < 1e-12);
            let back = ifft2(&y).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let x = ComplexTensor::zeros(&[6, 8]);
        assert!(matches!(fft2(&x), Err(Error::Dimension(_))));
    }
}
