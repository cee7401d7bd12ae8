use super::tensor::Tensor;

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(loss: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.dot(t).unwrap(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_loss() {
        let x = Tensor::filled(&[3], 0.3);
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
