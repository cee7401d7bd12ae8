use rand::Rng;

/// Standard i.i.d. Laplacian latent prior, `log p(z) = -Σ|z_i| - n ln 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaplacianPrior;

impl LaplacianPrior {
    pub fn log_prob(&self, z: &[f64]) -> f64 {
        -z.iter().map(|v| v.abs()).sum::<f64>() - z.len() as f64 * std::f64::consts::LN_2
    }

    /// Gradient of `-log p(z)`; zero at the kink.
    pub fn neg_log_prob_grad(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect()
    }

    /// Inverse-CDF sampling.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn at_origin() {
        let lp = LaplacianPrior.log_prob(&[0.0; 5]);
        assert_eq!(lp, -5.0 * std::f64::consts::LN_2);
    }

    #[test]
    fn sample_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let z = LaplacianPrior.sample(200_000, &mut rng);
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let mean_abs = z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!((mean_abs - 1.0).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn prior_identity(z in proptest::collection::vec(-50.0f64..50.0, 1..64)) {
            let lp = LaplacianPrior.log_prob(&z);
            let abs: f64 = z.iter().map(|v| v.abs()).sum();
            let n = z.len() as f64 * std::f64::consts::LN_2;
            prop_assert!((lp + abs + n).abs() <= 1e-12 * (abs + n));
        }
    }
}
