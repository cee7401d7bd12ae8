use flowrecon::flow::{FlowConfig, MultiscaleFlow};
use flowrecon::numerics::{finite_diff_grad, Tensor};
use flowrecon::training::LaplacianPrior;
use flowrecon::LatentVector;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturbed(cfg: FlowConfig, seed: u64) -> MultiscaleFlow {
    let mut flow = MultiscaleFlow::new(cfg, seed).unwrap();
    flow.perturb_params(&mut ChaCha8Rng::seed_from_u64(seed + 100), 0.1);
    flow
}

fn small_cfg() -> FlowConfig {
    FlowConfig { height: 8, width: 8, levels: 2, steps_per_level: 2, hidden: 6, ..Default::default() }
}

fn random_latent(flow: &MultiscaleFlow, rng: &mut ChaCha8Rng) -> LatentVector {
    flow.latent_from_vec(LaplacianPrior.sample(flow.dim(), rng)).unwrap()
}

#[test]
fn round_trips_both_directions() {
    let flow = perturbed(small_cfg(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let z = random_latent(&flow, &mut rng);
        let (f, ld_fwd) = flow.forward(&z).unwrap();
        let (z2, ld_inv) = flow.inverse(&f).unwrap();
        let err = z.as_slice().iter().zip(z2.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "latent round trip {err}");
        assert!((ld_fwd - ld_inv).abs() <= 1e-10 * ld_fwd.abs().max(1.0));

        let f = Tensor::from_fn(&flow.image_shape(), |_| rng.random_range(0.0..1.0));
        let (z, _) = flow.inverse(&f).unwrap();
        let (f2, _) = flow.forward(&z).unwrap();
        assert!(f2.max_abs_diff(&f) <= 1e-8);
    }
}

#[test]
fn logdet_matches_numeric_jacobian() {
    let cfg = FlowConfig { height: 4, width: 4, levels: 2, steps_per_level: 2, hidden: 4, ..Default::default() };
    let flow = perturbed(cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = random_latent(&flow, &mut rng);
    let n = flow.dim();
    let h = 1e-5;
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut zp = z.clone();
        zp.as_mut_slice()[j] += h;
        let mut zm = z.clone();
        zm.as_mut_slice()[j] -= h;
        let (fp, _) = flow.forward(&zp).unwrap();
        let (fm, _) = flow.forward(&zm).unwrap();
        for i in 0..n {
            jac[(i, j)] = (fp.data()[i] - fm.data()[i]) / (2.0 * h);
        }
    }
    let numeric = jac.determinant().abs().ln();
    let (_, logdet) = flow.forward(&z).unwrap();
    let rel = (numeric - logdet).abs() / logdet.abs();
    assert!(rel < 1e-4, "numeric {numeric} vs {logdet}");
}

#[test]
fn per_layer_logdets_add_up_and_scales_are_bounded() {
    let flow = perturbed(small_cfg(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let z = random_latent(&flow, &mut rng);
        let r = flow.forward_report(&z).unwrap();
        let sum: f64 = r.layer_logdets.iter().map(|(_, v)| v).sum();
        assert!((sum - r.logdet).abs() <= 1e-10 * r.logdet.abs().max(1.0));
        assert!(r.min_scale > 0.05 && r.max_scale <= 1.0, "{} {}", r.min_scale, r.max_scale);
    }
}

#[test]
fn fresh_network_logdet_is_constant() {
    let flow = MultiscaleFlow::new(FlowConfig::default(), 7).unwrap();
    let gamma0 = flow.config().initial_scale();
    let expect = flow.coupling_transformed_count() as f64 * gamma0.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let z = random_latent(&flow, &mut rng);
        let (_, logdet) = flow.forward(&z).unwrap();
        // The orthogonal mixing initialisation contributes |det| = 1.
        assert!((logdet - expect).abs() < 1e-9, "{logdet} vs {expect}");
    }
}

/// Turns every mixing layer into the identity.
fn identity_mixing(flow: &mut MultiscaleFlow) {
    let slots = flow.params().slots().to_vec();
    for s in slots.iter().filter(|s| s.name.contains(".mix.")) {
        flow.params_mut().values_mut()[s.range()].iter_mut().for_each(|v| *v = 0.0);
    }
    let slots = flow.buffers().slots().to_vec();
    for s in slots {
        let is_perm = s.name.ends_with(".perm");
        for (i, v) in flow.buffers_mut().values_mut()[s.range()].iter_mut().enumerate() {
            *v = if is_perm { i as f64 } else { 1.0 };
        }
    }
}

#[test]
fn fresh_single_level_closed_forms() {
    let cfg = FlowConfig { height: 8, width: 8, levels: 1, steps_per_level: 4, hidden: 4, ..Default::default() };
    let mut flow = MultiscaleFlow::new(cfg, 9).unwrap();
    identity_mixing(&mut flow);
    let gamma0 = flow.config().initial_scale();
    let n = 64.0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = Tensor::from_fn(&flow.image_shape(), |_| rng.random_range(-1.0..1.0));
    // Each half of the channels is transformed by two of the four steps.
    let (z, _) = flow.inverse(&f).unwrap();
    let abs_f: f64 = f.data().iter().map(|v| v.abs()).sum();
    let abs_z: f64 = z.as_slice().iter().map(|v| v.abs()).sum();
    assert!((abs_z - abs_f / gamma0.powi(2)).abs() < 1e-10 * abs_z);
    let expect = -abs_f / gamma0.powi(2) - n * std::f64::consts::LN_2 - 2.0 * n * gamma0.ln();
    assert!((flow.log_prob(&f).unwrap() - expect).abs() < 1e-8);
}

#[test]
fn doubling_actnorm_scales_shifts_log_prob() {
    let flow = MultiscaleFlow::new(small_cfg(), 11).unwrap();
    let mut doubled = flow.clone();
    doubled.scale_actnorm(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = Tensor::from_fn(&flow.image_shape(), |_| rng.random_range(-1.0..1.0));
    let (z, _) = flow.inverse(&f).unwrap();
    let (z2, _) = doubled.inverse(&f).unwrap();
    let prior_change = LaplacianPrior.log_prob(z2.as_slice()) - LaplacianPrior.log_prob(z.as_slice());
    let expect = -(flow.actnorm_component_count() as f64) * std::f64::consts::LN_2 + prior_change;
    let got = doubled.log_prob(&f).unwrap() - flow.log_prob(&f).unwrap();
    assert!((got - expect).abs() < 1e-8, "{got} vs {expect}");
}

#[test]
fn single_actnorm_doubling_is_minus_n_ln2() {
    let cfg = FlowConfig { height: 4, width: 4, levels: 1, steps_per_level: 1, hidden: 4, ..Default::default() };
    let flow = MultiscaleFlow::new(cfg, 13).unwrap();
    assert_eq!(flow.actnorm_component_count(), flow.dim());
    let mut doubled = flow.clone();
    doubled.scale_actnorm(2.0);
    let z = random_latent(&flow, &mut ChaCha8Rng::seed_from_u64(14));
    let (_, a) = flow.forward(&z).unwrap();
    let (_, b) = doubled.forward(&z).unwrap();
    assert!((b - a - 16.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn log_prob_is_prior_minus_logdet() {
    let flow = perturbed(small_cfg(), 15);
    let z = random_latent(&flow, &mut ChaCha8Rng::seed_from_u64(16));
    let (f, logdet) = flow.forward(&z).unwrap();
    let expect = LaplacianPrior.log_prob(z.as_slice()) - logdet;
    assert!((flow.log_prob(&f).unwrap() - expect).abs() < 1e-8);
}

#[test]
fn sampling() {
    let flow = perturbed(small_cfg(), 17);
    let zero = flow.forward(&flow.zero_latent()).unwrap().0;
    assert_eq!(flow.sample(&mut ChaCha8Rng::seed_from_u64(1), 0.0).unwrap(), zero);
    let a = flow.sample(&mut ChaCha8Rng::seed_from_u64(2), 0.7).unwrap();
    let b = flow.sample(&mut ChaCha8Rng::seed_from_u64(2), 0.7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &flow.image_shape());
    assert!(a.first_non_finite().is_none());
    assert!(flow.sample(&mut ChaCha8Rng::seed_from_u64(2), -1.0).is_err());
}

#[test]
fn vjp_latent_contract() {
    let cfg = FlowConfig { height: 4, width: 4, levels: 2, steps_per_level: 2, hidden: 4, ..Default::default() };
    let flow = perturbed(cfg, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let z = random_latent(&flow, &mut rng);
    let u = Tensor::from_fn(&flow.image_shape(), |_| rng.random_range(-1.0..1.0));
    let v = Tensor::from_fn(&flow.image_shape(), |_| rng.random_range(-1.0..1.0));

    let zero = flow.vjp_latent(&z, &Tensor::zeros(&flow.image_shape())).unwrap();
    assert!(zero.as_slice().iter().all(|&x| x == 0.0));

    let ju = flow.vjp_latent(&z, &u).unwrap();
    let jv = flow.vjp_latent(&z, &v).unwrap();
    let juv = flow.vjp_latent(&z, &u.scale(2.0).add(&v.scale(-3.0)).unwrap()).unwrap();
    for i in 0..flow.dim() {
        let lin = 2.0 * ju.as_slice()[i] - 3.0 * jv.as_slice()[i];
        assert!((juv.as_slice()[i] - lin).abs() < 1e-10);
    }

    let zt = Tensor::new(vec![flow.dim()], z.as_slice().to_vec()).unwrap();
    let fd = finite_diff_grad(
        |x| {
            let zl = flow.latent_from_vec(x.data().to_vec()).unwrap();
            flow.forward(&zl).unwrap().0.dot(&u).unwrap()
        },
        &zt,
        1e-5,
    );
    let g = Tensor::new(vec![flow.dim()], ju.into_vec()).unwrap();
    let rel = g.sub(&fd).unwrap().norm() / fd.norm();
    assert!(rel < 1e-5, "{rel}");
}

#[test]
fn section_bookkeeping() {
    for (h, w, c, levels) in [(32, 32, 1, 3), (32, 32, 1, 5), (16, 8, 2, 2), (64, 64, 1, 6), (4, 4, 1, 2)] {
        let cfg = FlowConfig { height: h, width: w, channels: c, levels, ..Default::default() };
        cfg.validate().unwrap();
        assert_eq!(cfg.section_lens().iter().sum::<usize>(), h * w * c);
    }
    assert_eq!(FlowConfig::default().section_lens(), vec![512, 256, 256]);
    assert_eq!(FlowConfig::compressibility_preset().section_lens(), vec![512, 256, 128, 64, 64]);
    let bad = FlowConfig { height: 12, ..Default::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn non_finite_input_names_a_layer() {
    let flow = perturbed(small_cfg(), 20);
    let mut f = Tensor::zeros(&flow.image_shape());
    f.data_mut()[3] = f64::INFINITY;
    match flow.inverse(&f) {
        Err(flowrecon::Error::Numeric { context, .. }) => assert!(context.contains("level0"), "{context}"),
        other => panic!("expected numeric error, got {other:?}"),
    }
}
