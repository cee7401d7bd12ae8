use std::path::{Path, PathBuf};

use flowrecon::evaluation::{sweep, Metrics};
use flowrecon::imaging::{add_noise, cartesian_mask, poisson_disc_mask, MriOperator, NoiseModel, SamplingMask};
use flowrecon::io::{format_float, write_archive, write_csv, write_pgm, NamedArray, Table};
use flowrecon::numerics::{ComplexTensor, Tensor};
use flowrecon::reconstruct::{debias_with, haar_truncation_study, inn_proj_tv, project, truncation_study, TruncationRow};
use flowrecon::sparsity::{fista_pls_tv, FistaConfig, TvConfig};
use flowrecon::training::{generate_dataset, load_checkpoint, save_checkpoint, train, TrainingMeta};
use flowrecon::MultiscaleFlow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{stream, ExperimentConfig, MaskKind, Method};
use crate::error::CliError;

pub const METRICS_HEADER: [&str; 8] = ["method", "mask", "snr_db", "k", "mu", "lambda", "rmse", "ssim"];
pub const BIAS_VARIANCE_HEADER: [&str; 4] = ["mu", "avg_sq_bias", "avg_variance", "d"];

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(flowrecon::Error::io(path, e))
}

/// Core io failures keep their exit class.
fn out(r: flowrecon::Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        e @ flowrecon::Error::Io { .. } => CliError::Io(e),
        e => CliError::Core(e),
    })
}

/// Creates the output directory and records the fully resolved config.
pub fn prepare_output(cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("config.resolved.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| io_err(&path, e))
}

fn path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn test_set(cfg: &ExperimentConfig) -> Vec<Tensor> {
    let images = generate_dataset(&cfg.phantom_config(), cfg.data.test_count, cfg.seed_for(stream::TEST_DATA));
    images.into_iter().map(|f| with_channels(f, cfg.flow.channels)).collect()
}

/// Pads a single-channel phantom with zero imaginary channels.
fn with_channels(f: Tensor, channels: usize) -> Tensor {
    if channels == 1 {
        return f;
    }
    let zero = Tensor::zeros(f.shape());
    let mut parts = vec![f];
    parts.resize(channels, zero);
    Tensor::stack_channels(&parts).expect("equal shapes")
}

/// Single-channel view for PGM output: magnitude across channels.
fn display(f: &Tensor) -> Result<Tensor> {
    let (h, w, c) = f.dims3()?;
    if c == 1 {
        return Ok(f.clone());
    }
    let d = f.data();
    let mag = (0..h * w).map(|p| (0..c).map(|k| d[p * c + k].powi(2)).sum::<f64>().sqrt()).collect();
    Ok(Tensor::new(vec![h, w, 1], mag)?)
}

fn write_image(path: &Path, f: &Tensor) -> Result<()> {
    out(write_pgm(path, &display(f)?).map(|_| ()))
}

fn test_image(cfg: &ExperimentConfig) -> Result<Tensor> {
    let idx = cfg.recon.image_index;
    test_set(cfg).into_iter().nth(idx).ok_or_else(|| {
        CliError::Config(format!("recon.image_index: {idx} is out of range for data.test_count = {}", cfg.data.test_count))
    })
}

pub fn build_mask(cfg: &ExperimentConfig, ratio: f64, seed: u64) -> Result<SamplingMask> {
    let (h, w) = (cfg.flow.height, cfg.flow.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = &cfg.mask;
    let mask = match m.kind {
        MaskKind::Full => SamplingMask::full(h, w),
        MaskKind::PoissonDisc => {
            poisson_disc_mask(h, w, ratio, m.calibration_fraction * h.min(w) as f64, &mut rng)?
        }
        MaskKind::Cartesian => cartesian_mask(h, w, ratio, m.center_lines, &mut rng)?,
    };
    Ok(mask)
}

fn measure(op: &MriOperator, truth: &Tensor, snr_db: f64, seed: u64) -> Result<ComplexTensor> {
    let clean = op.apply(truth)?;
    if snr_db == f64::INFINITY {
        return Ok(clean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(add_noise(&clean, op.mask(), &NoiseModel::new(snr_db), &mut rng)?)
}

fn load_flow(cfg: &ExperimentConfig) -> Result<MultiscaleFlow> {
    let p = cfg.checkpoint_path();
    let (flow, _) = load_checkpoint(&p).map_err(|e| match e {
        e @ flowrecon::Error::Io { .. } => CliError::Io(e),
        e => CliError::Core(e),
    })?;
    if flow.config() != &cfg.flow {
        return Err(CliError::Config(format!(
            "flow: architecture in {} differs from the [flow] section of the config",
            p.display()
        )));
    }
    Ok(flow)
}

/// One reconstruction with explicit weights; returns the estimate and its
/// per-iteration loss table.
struct Recon {
    image: Tensor,
    latent: Option<Vec<f64>>,
    losses: Table,
}

fn reconstruct_one(
    cfg: &ExperimentConfig,
    method: Method,
    flow: Option<&MultiscaleFlow>,
    op: &MriOperator,
    g: &ComplexTensor,
    mu: f64,
    lambda: f64,
    k_fraction: f64,
) -> Result<Recon> {
    match method {
        Method::Inn => {
            let flow = flow.expect("flow loaded for the inn method");
            let rc = cfg.recon_config(flow.dim(), mu, lambda, k_fraction);
            let mut res = inn_proj_tv(flow, op, g, &rc)?;
            let mut losses = Table::new(&["iteration", "stage", "data", "tv", "total"]);
            for (i, r) in res.losses.iter().enumerate() {
                losses.push(vec![i.to_string(), "projected".into(), format_float(r.data), format_float(r.tv), format_float(r.total)]);
            }
            if cfg.recon.debias_iters > 0 {
                let dc = flowrecon::ReconConfig { max_iters: cfg.recon.debias_iters, ..rc };
                res = debias_with(flow, op, g, &res, &dc)?;
                for (i, r) in res.losses.iter().enumerate() {
                    losses.push(vec![i.to_string(), "debias".into(), format_float(r.data), format_float(r.tv), format_float(r.total)]);
                }
            }
            Ok(Recon { image: res.image, latent: Some(res.latent.into_vec()), losses })
        }
        Method::PlsTv => {
            let fc = FistaConfig {
                lambda,
                max_iters: cfg.recon.fista_iters,
                tv: TvConfig { prox_max_iters: cfg.recon.prox_iters, ..TvConfig::default() },
                ..FistaConfig::default()
            };
            let res = fista_pls_tv(op, g, &fc)?;
            let mut losses = Table::new(&["iteration", "total"]);
            for (i, v) in res.losses.iter().enumerate() {
                losses.push(vec![i.to_string(), format_float(*v)]);
            }
            Ok(Recon { image: res.image, latent: None, losses })
        }
    }
}

fn metrics_row(
    method: Method,
    mask: &SamplingMask,
    snr_db: f64,
    k: Option<usize>,
    mu: Option<f64>,
    lambda: f64,
    m: Option<&Metrics>,
) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    vec![
        method.name().into(),
        mask.descriptor().into(),
        format_float(snr_db),
        k.map(|k| k.to_string()).unwrap_or_default(),
        opt(mu),
        format_float(lambda),
        format_float(m.map_or(f64::NAN, |m| m.rmse)),
        format_float(m.map_or(f64::NAN, |m| m.ssim)),
    ]
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let pc = cfg.phantom_config();
    let train_set = generate_dataset(&pc, cfg.training.dataset_size, cfg.seed_for(stream::TRAIN_DATA));
    let test = test_set(cfg);
    let mut arrays = Vec::with_capacity(train_set.len() + test.len());
    for (split, images) in [("train", &train_set), ("test", &test)] {
        for (i, f) in images.iter().enumerate() {
            arrays.push(NamedArray::new(format!("{split}/{i:04}"), f.shape().to_vec(), f.data().to_vec()));
        }
        for (i, f) in images.iter().take(cfg.data.previews).enumerate() {
            write_image(&path(cfg, &format!("{split}_{i:04}.pgm")), f)?;
        }
    }
    out(write_archive(&path(cfg, "dataset.far"), &arrays))?;
    println!("wrote {} training and {} test phantoms", train_set.len(), test.len());
    Ok(())
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let mut flow = MultiscaleFlow::new(cfg.flow.clone(), cfg.seed_for(stream::FLOW_INIT))?;
    let history = train(&mut flow, &cfg.train_config(), &cfg.phantom_config())?;
    let mut table = Table::new(&["epoch", "nll"]);
    for (e, v) in history.iter().enumerate() {
        table.push(vec![e.to_string(), format_float(*v)]);
    }
    out(write_csv(&path(cfg, "training.csv"), &table))?;
    let meta = TrainingMeta { epoch: history.len(), nll: history.last().copied().unwrap_or(f64::NAN) };
    let ckpt = cfg.checkpoint_path();
    out(save_checkpoint(&ckpt, &flow, &meta))?;
    println!("trained {} epochs, final nll {}; checkpoint {}", history.len(), meta.nll, ckpt.display());
    Ok(())
}

pub fn sample(cfg: &ExperimentConfig) -> Result<()> {
    let flow = load_flow(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_for(stream::SAMPLE));
    let mut arrays = Vec::new();
    for i in 0..cfg.data.previews {
        let f = flow.sample(&mut rng, cfg.data.sample_temperature)?;
        write_image(&path(cfg, &format!("sample_{i:04}.pgm")), &f)?;
        arrays.push(NamedArray::new(format!("sample/{i:04}"), f.shape().to_vec(), f.data().to_vec()));
    }
    out(write_archive(&path(cfg, "samples.far"), &arrays))?;
    println!("wrote {} samples at temperature {}", arrays.len(), cfg.data.sample_temperature);
    Ok(())
}

pub fn mask(cfg: &ExperimentConfig) -> Result<()> {
    let m = build_mask(cfg, cfg.mask.ratio, cfg.seed_for(stream::MASK))?;
    out(m.write_pbm(&path(cfg, "mask.pbm")))?;
    let arrays = [NamedArray::new("mask", vec![m.height(), m.width()], m.to_values())];
    out(write_archive(&path(cfg, "mask.far"), &arrays))?;
    let mut table = Table::new(&["mask", "nominal_ratio", "achieved_ratio", "sampled", "total"]);
    table.push(vec![
        m.descriptor().into(),
        format_float(m.nominal_ratio()),
        format_float(m.achieved_ratio()),
        m.sampled_count().to_string(),
        (m.height() * m.width()).to_string(),
    ]);
    out(write_csv(&path(cfg, "mask.csv"), &table))?;
    println!("{}: achieved ratio {:.4}", m.descriptor(), m.achieved_ratio());
    Ok(())
}

pub fn reconstruct(cfg: &ExperimentConfig, method: Method) -> Result<()> {
    let truth = test_image(cfg)?;
    let mask = build_mask(cfg, cfg.mask.ratio, cfg.seed_for(stream::MASK))?;
    let op = MriOperator::new(mask, cfg.mask.mode);
    let g = measure(&op, &truth, cfg.noise.snr_db, cfg.seed_for(stream::NOISE))?;
    let flow = match method {
        Method::Inn => Some(load_flow(cfg)?),
        Method::PlsTv => None,
    };
    let r = &cfg.recon;
    let rec = reconstruct_one(cfg, method, flow.as_ref(), &op, &g, r.mu, r.lambda, r.k_fraction)?;
    let metrics = Metrics::compute(&rec.image, &truth, cfg.evaluation.roi.as_ref())?;

    let zero_filled = op.adjoint(&g)?;
    write_image(&path(cfg, "estimate.pgm"), &rec.image)?;
    write_image(&path(cfg, "truth.pgm"), &truth)?;
    write_image(&path(cfg, "zero_filled.pgm"), &zero_filled)?;
    let mut arrays = vec![
        NamedArray::new("estimate", rec.image.shape().to_vec(), rec.image.data().to_vec()),
        NamedArray::new("truth", truth.shape().to_vec(), truth.data().to_vec()),
        NamedArray::new("zero_filled", zero_filled.shape().to_vec(), zero_filled.data().to_vec()),
    ];
    if let Some(z) = rec.latent {
        arrays.push(NamedArray::new("latent", vec![z.len()], z));
    }
    out(write_archive(&path(cfg, "reconstruction.far"), &arrays))?;
    out(write_csv(&path(cfg, "losses.csv"), &rec.losses))?;

    let (k, mu) = match method {
        Method::Inn => (Some(cfg.k_for(cfg.flow.dim(), r.k_fraction)), Some(r.mu)),
        Method::PlsTv => (None, None),
    };
    let mut table = Table::new(&METRICS_HEADER);
    table.push(metrics_row(method, op.mask(), cfg.noise.snr_db, k, mu, r.lambda, Some(&metrics)));
    out(write_csv(&path(cfg, "metrics.csv"), &table))?;
    println!("{}: rmse {:e} ssim {:.6}", method.name(), metrics.rmse, metrics.ssim);
    if let (Some(rr), Some(rs)) = (metrics.roi_rmse, metrics.roi_ssim) {
        println!("roi: rmse {rr:e} ssim {rs:.6}");
    }
    Ok(())
}

/// `fractions` are kept percentages.
pub fn truncate_study(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<()> {
    if fractions.iter().any(|p| !(*p > 0.0 && *p <= 100.0)) {
        return Err(CliError::Config(format!("evaluation.fractions: percentages must lie in (0, 100], got {fractions:?}")));
    }
    let flow = load_flow(cfg)?;
    let images = test_set(cfg);
    let kept: Vec<f64> = fractions.iter().map(|p| p / 100.0).collect();
    let mut rows = truncation_study(&flow, &images, &kept)?;
    let levels = if cfg.evaluation.haar_levels == 0 { cfg.flow.levels } else { cfg.evaluation.haar_levels };
    rows.extend(haar_truncation_study(&images, levels)?);
    out(write_csv(&path(cfg, "truncation.csv"), &TruncationRow::table(&rows)))?;

    let n = flow.dim();
    let (z, _) = flow.inverse(&images[0])?;
    for (p, f) in fractions.iter().zip(&kept) {
        let k = (f * n as f64).round() as usize;
        let (img, _) = flow.forward(&project(&z, k)?)?;
        write_image(&path(cfg, &format!("truncated_{}.pgm", format_percent(*p))), &img)?;
    }
    for r in &rows {
        println!("{} kept {:.4}: rmse {:e} ssim {:.6}", r.transform, r.kept_fraction, r.mean_rmse, r.mean_ssim);
    }
    Ok(())
}

fn format_percent(p: f64) -> String {
    format!("{p}").replace('.', "p")
}

pub fn bias_variance(cfg: &ExperimentConfig, method: Method) -> Result<()> {
    let truth = test_image(cfg)?;
    let mask = build_mask(cfg, cfg.mask.ratio, cfg.seed_for(stream::MASK))?;
    let op = MriOperator::new(mask, cfg.mask.mode);
    let flow = match method {
        Method::Inn => Some(load_flow(cfg)?),
        Method::PlsTv => None,
    };
    let d = cfg.evaluation.realizations;
    let r = &cfg.recon;
    // For PLS-TV the swept weight is its TV weight.
    let recon = |g: &ComplexTensor, w: f64| -> flowrecon::Result<Tensor> {
        let (mu, lambda) = match method {
            Method::Inn => (w, r.lambda),
            Method::PlsTv => (0.0, w),
        };
        reconstruct_one(cfg, method, flow.as_ref(), &op, g, mu, lambda, r.k_fraction)
            .map(|rec| rec.image)
            .map_err(|e| match e {
                CliError::Core(e) | CliError::Io(e) => e,
                CliError::Config(msg) => flowrecon::Error::Config(msg),
            })
    };
    let noise = NoiseModel::new(cfg.noise.snr_db);
    let results = flowrecon::bias_variance(recon, &truth, &op, &noise, d, &cfg.evaluation.mus, cfg.seed_for(stream::NOISE))?;

    let mut table = Table::new(&BIAS_VARIANCE_HEADER);
    let mut arrays = Vec::new();
    for (mu, res) in &results {
        match res {
            Ok(bv) => {
                table.push(vec![format_float(*mu), format_float(bv.avg_sq_bias), format_float(bv.avg_variance), d.to_string()]);
                arrays.push(NamedArray::new(format!("bias/{}", format_float(*mu)), truth.shape().to_vec(), bv.bias.clone()));
                arrays.push(NamedArray::new(format!("variance/{}", format_float(*mu)), truth.shape().to_vec(), bv.variance.clone()));
                println!("mu {mu:e}: avg squared bias {:e}, avg variance {:e}", bv.avg_sq_bias, bv.avg_variance);
            }
            Err(e) => {
                table.push(vec![format_float(*mu), format_float(f64::NAN), format_float(f64::NAN), d.to_string()]);
                eprintln!("mu {mu:e}: failed: {e}");
            }
        }
    }
    out(write_csv(&path(cfg, "bias_variance.csv"), &table))?;
    out(write_archive(&path(cfg, "bias_variance.far"), &arrays))?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    ratio_index: usize,
    snr_db: f64,
    mu: f64,
    lambda: f64,
    k_fraction: f64,
}

pub fn sweep_cmd(cfg: &ExperimentConfig, method: Method) -> Result<()> {
    let s = &cfg.sweep;
    if s.ratios.is_empty() || s.snrs_db.is_empty() || s.lambdas.is_empty() {
        return Err(CliError::Config("sweep: ratios, snrs_db and lambdas must be non-empty".into()));
    }
    // PLS-TV has no latent dimension or flow TV weight to vary.
    let (mus, ks) = match method {
        Method::Inn => (s.mus.clone(), s.k_fractions.clone()),
        Method::PlsTv => (vec![0.0], vec![cfg.recon.k_fraction]),
    };
    if mus.is_empty() || ks.is_empty() {
        return Err(CliError::Config("sweep: mus and k_fractions must be non-empty".into()));
    }
    let truth = test_image(cfg)?;
    let flow = match method {
        Method::Inn => Some(load_flow(cfg)?),
        Method::PlsTv => None,
    };
    let ops: Vec<MriOperator> = s
        .ratios
        .iter()
        .enumerate()
        .map(|(i, &ratio)| {
            let mask = build_mask(cfg, ratio, flowrecon::evaluation::derive_seed(cfg.seed_for(stream::MASK), i as u64))?;
            Ok(MriOperator::new(mask, cfg.mask.mode))
        })
        .collect::<Result<_>>()?;

    let mut grid = Vec::new();
    for ratio_index in 0..s.ratios.len() {
        for &snr_db in &s.snrs_db {
            for &mu in &mus {
                for &lambda in &s.lambdas {
                    for &k_fraction in &ks {
                        grid.push(Cell { ratio_index, snr_db, mu, lambda, k_fraction });
                    }
                }
            }
        }
    }
    let noise_seed = cfg.seed_for(stream::NOISE);
    let result = sweep(grid, |c: &Cell| {
        let op = &ops[c.ratio_index];
        let wrap = |e: CliError| match e {
            CliError::Core(e) | CliError::Io(e) => e,
            CliError::Config(msg) => flowrecon::Error::Config(msg),
        };
        let g = measure(op, &truth, c.snr_db, noise_seed).map_err(wrap)?;
        let rec = reconstruct_one(cfg, method, flow.as_ref(), op, &g, c.mu, c.lambda, c.k_fraction).map_err(wrap)?;
        Metrics::compute(&rec.image, &truth, cfg.evaluation.roi.as_ref())
    })?;

    let mut table = Table::new(&METRICS_HEADER);
    for (c, outcome) in &result.cells {
        let op = &ops[c.ratio_index];
        let (k, mu) = match method {
            Method::Inn => (Some(cfg.k_for(cfg.flow.dim(), c.k_fraction)), Some(c.mu)),
            Method::PlsTv => (None, None),
        };
        if let Err(e) = outcome {
            eprintln!("cell {c:?} failed: {e}");
        }
        table.push(metrics_row(method, op.mask(), c.snr_db, k, mu, c.lambda, outcome.as_ref().ok()));
    }
    out(write_csv(&path(cfg, "metrics.csv"), &table))?;
    match result.best_cell() {
        Some((c, m)) => println!("best: {c:?} rmse {:e} ssim {:.6}", m.rmse, m.ssim),
        None => println!("no cell succeeded"),
    }
    Ok(())
}
