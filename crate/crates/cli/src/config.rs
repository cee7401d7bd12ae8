use std::path::{Path, PathBuf};

use flowrecon::evaluation::Roi;
use flowrecon::flow::FlowConfig;
use flowrecon::imaging::ChannelMode;
use flowrecon::numerics::AdamParams;
use flowrecon::sparsity::TvConfig;
use flowrecon::training::{PhantomConfig, TrainConfig};
use flowrecon::ReconConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Sub-stream indices for seeds derived from the master seed.
pub mod stream {
    pub const FLOW_INIT: u64 = 0;
    pub const TRAIN_DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const MASK: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const SAMPLE: u64 = 5;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub flow: FlowConfig,
    pub training: TrainingSection,
    pub phantom: PhantomConfig,
    pub data: DataSection,
    pub mask: MaskSection,
    pub noise: NoiseSection,
    pub recon: ReconSection,
    pub evaluation: EvaluationSection,
    pub sweep: SweepSection,
    pub paths: PathsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            flow: FlowConfig::default(),
            training: TrainingSection::default(),
            phantom: PhantomConfig::default(),
            data: DataSection::default(),
            mask: MaskSection::default(),
            noise: NoiseSection::default(),
            recon: ReconSection::default(),
            evaluation: EvaluationSection::default(),
            sweep: SweepSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradient-norm cap; `inf` disables clipping.
    pub max_grad_norm: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            dataset_size: t.dataset_size,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            max_grad_norm: t.max_grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Number of held-out test phantoms.
    pub test_count: usize,
    /// Number of PGM previews written by `gen-data` and `sample`.
    pub previews: usize,
    pub sample_temperature: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { test_count: 50, previews: 4, sample_temperature: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    PoissonDisc,
    Cartesian,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub kind: MaskKind,
    pub ratio: f64,
    /// Calibration disc radius as a fraction of the k-space extent.
    pub calibration_fraction: f64,
    pub center_lines: usize,
    pub mode: ChannelMode,
}

impl Default for MaskSection {
    fn default() -> Self {
        MaskSection {
            kind: MaskKind::PoissonDisc,
            ratio: 8.0,
            calibration_fraction: flowrecon::imaging::DEFAULT_CALIBRATION_FRACTION,
            center_lines: 4,
            mode: ChannelMode::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Per-sample measurement SNR in dB; `inf` for noiseless data.
    pub snr_db: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { snr_db: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Latent-subspace-constrained reconstruction through the flow.
    Inn,
    /// TV-penalised least squares.
    PlsTv,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Inn => "inn",
            Method::PlsTv => "pls-tv",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inn" => Ok(Method::Inn),
            "pls-tv" => Ok(Method::PlsTv),
            other => Err(format!("unknown method {other:?} (expected inn or pls-tv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub method: Method,
    /// Index of the test phantom to reconstruct.
    pub image_index: usize,
    /// Free latent coordinates as a fraction of n; ignored when `k` is set.
    pub k_fraction: f64,
    pub k: Option<usize>,
    /// TV weight of the flow-based method.
    pub mu: f64,
    /// Prior weight for the flow-based method; TV weight for PLS-TV.
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub window: usize,
    pub tv_epsilon: f64,
    pub debias_iters: usize,
    pub fista_iters: usize,
    pub prox_iters: usize,
}

impl Default for ReconSection {
    fn default() -> Self {
        let r = ReconConfig::default();
        ReconSection {
            method: Method::Inn,
            image_index: 0,
            k_fraction: 0.25,
            k: None,
            mu: 1e-3,
            lambda: 0.0,
            learning_rate: r.adam.learning_rate,
            max_iters: r.max_iters,
            tol: r.tol,
            window: r.window,
            tv_epsilon: r.tv_epsilon,
            debias_iters: 0,
            fista_iters: 300,
            prox_iters: TvConfig::default().prox_max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Noise realizations per bias-variance point.
    pub realizations: usize,
    pub mus: Vec<f64>,
    /// Kept fractions, in percent, for the truncation study.
    pub fractions: Vec<f64>,
    /// Levels of the Haar comparison; 0 uses the flow's level count.
    pub haar_levels: usize,
    pub roi: Option<Roi>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            realizations: 25,
            mus: vec![0.0, 1e-4, 1e-3, 3e-3, 1e-2],
            fractions: vec![50.0, 25.0],
            haar_levels: 0,
            roi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub ratios: Vec<f64>,
    pub snrs_db: Vec<f64>,
    pub mus: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub k_fractions: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            ratios: vec![8.0],
            snrs_db: vec![20.0],
            mus: vec![1e-4, 1e-3],
            lambdas: vec![0.0],
            k_fractions: vec![0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Flow checkpoint; defaults to `<output_dir>/flow.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(flowrecon::Error::io(path, e)))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise resolved config: {e}")))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.output_dir.join("flow.ckpt"))
    }

    pub fn seed_for(&self, stream: u64) -> u64 {
        flowrecon::evaluation::derive_seed(self.seed, stream)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            dataset_size: t.dataset_size,
            adam: AdamParams { learning_rate: t.learning_rate, beta1: t.beta1, beta2: t.beta2, eps: t.eps },
            max_grad_norm: t.max_grad_norm,
            seed: self.seed_for(stream::TRAIN_DATA),
        }
    }

    /// Phantoms always match the flow geometry.
    pub fn phantom_config(&self) -> PhantomConfig {
        PhantomConfig { height: self.flow.height, width: self.flow.width, ..self.phantom.clone() }
    }

    pub fn k_for(&self, n: usize, k_fraction: f64) -> usize {
        self.recon.k.unwrap_or(((n as f64 * k_fraction).round() as usize).clamp(1, n))
    }

    pub fn recon_config(&self, n: usize, mu: f64, lambda: f64, k_fraction: f64) -> ReconConfig {
        let r = &self.recon;
        ReconConfig {
            k: Some(self.k_for(n, k_fraction)),
            mu,
            lambda,
            adam: AdamParams::with_learning_rate(r.learning_rate),
            max_iters: r.max_iters,
            tol: r.tol,
            window: r.window,
            tv_epsilon: r.tv_epsilon,
            record_iterates: false,
        }
    }

    /// Checks the cross-section constraints serde cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        self.flow.validate().map_err(|e| CliError::Config(format!("flow: {e}")))?;
        if self.flow.channels != self.mask.mode.channels() {
            return bad(
                "mask.mode",
                format!("{:?} needs {} image channel(s) but flow.channels = {}", self.mask.mode, self.mask.mode.channels(), self.flow.channels),
            );
        }
        if !(self.mask.ratio >= 1.0) {
            return bad("mask.ratio", format!("must be >= 1, got {}", self.mask.ratio));
        }
        if !(self.mask.calibration_fraction >= 0.0 && self.mask.calibration_fraction < 0.5) {
            return bad("mask.calibration_fraction", format!("must lie in [0, 0.5), got {}", self.mask.calibration_fraction));
        }
        if self.noise.snr_db.is_nan() || self.noise.snr_db == f64::NEG_INFINITY {
            return bad("noise.snr_db", format!("must be a number or inf, got {}", self.noise.snr_db));
        }
        if self.training.batch_size == 0 || self.training.dataset_size == 0 {
            return bad("training", "batch_size and dataset_size must be positive".into());
        }
        if !(self.training.max_grad_norm > 0.0) {
            return bad("training.max_grad_norm", format!("must be positive, got {}", self.training.max_grad_norm));
        }
        if !(self.recon.k_fraction > 0.0 && self.recon.k_fraction <= 1.0) {
            return bad("recon.k_fraction", format!("must lie in (0, 1], got {}", self.recon.k_fraction));
        }
        let n = self.flow.dim();
        if let Some(k) = self.recon.k {
            if k == 0 || k > n {
                return bad("recon.k", format!("must lie in 1..={n}, got {k}"));
            }
        }
        if self.recon.mu < 0.0 || self.recon.lambda < 0.0 {
            return bad("recon.mu/recon.lambda", "must be non-negative".into());
        }
        if self.evaluation.realizations < 2 {
            return bad("evaluation.realizations", format!("must be at least 2, got {}", self.evaluation.realizations));
        }
        if self.data.test_count == 0 {
            return bad("data.test_count", "must be positive".into());
        }
        Ok(())
    }
}
