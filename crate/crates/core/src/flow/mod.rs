//! Multiscale invertible generator: squeeze, flow steps (actnorm, 1x1
//! mixing, affine coupling) and split per level, emitting one latent
//! section per level.

mod latent;
mod layers;
mod reshape;
mod store;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use latent::LatentVector;
pub use layers::{AffineCoupling, InvMix1x1, Layer};
pub use reshape::{concat_channels, split_channels, squeeze, unsqueeze};
pub use store::{ParamSlot, ParamStore};

use layers::{ActNorm, ConvSlots, LayerCache};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::training::LaplacianPrior;

fn random_rotation(c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(c, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)).qr().q()
}

/// Architecture of a [`MultiscaleFlow`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub levels: usize,
    pub steps_per_level: usize,
    pub hidden: usize,
    pub kernel: usize,
    /// Lower bound `c` of the coupling scale; bounds each coupling's inverse gain by `1/c`.
    pub scale_floor: f64,
    pub scale_shift: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            height: 32,
            width: 32,
            channels: 1,
            levels: 3,
            steps_per_level: 4,
            hidden: 32,
            kernel: 3,
            scale_floor: 0.1,
            scale_shift: 2.0,
        }
    }
}

impl FlowConfig {
    /// Five levels at 32x32, deep enough to reach a 6.25% kept fraction.
    pub fn compressibility_preset() -> Self {
        FlowConfig { levels: 5, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.levels == 0 || self.steps_per_level == 0 || self.hidden == 0 || self.channels == 0 {
            return bad("levels, steps_per_level, hidden and channels must be positive".into());
        }
        let div = 1usize << self.levels;
        if self.height % div != 0 || self.width % div != 0 {
            return bad(format!(
                "image extent {}x{} must be divisible by 2^levels = {div}",
                self.height, self.width
            ));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel extent must be odd, got {}", self.kernel));
        }
        if !(self.scale_floor > 0.0 && self.scale_floor < 1.0) {
            return bad(format!("scale_floor must lie in (0, 1), got {}", self.scale_floor));
        }
        if !self.scale_shift.is_finite() {
            return bad("scale_shift must be finite".into());
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// `(h, w, c)` of the tensor a level operates on, after its squeeze.
    pub fn level_shape(&self, level: usize) -> (usize, usize, usize) {
        let f = 1 << (level + 1);
        (self.height / f, self.width / f, 4 * self.channels << level)
    }

    /// Shapes of the latent sections, finest first.
    pub fn section_shapes(&self) -> Vec<(usize, usize, usize)> {
        (0..self.levels)
            .map(|l| {
                let (h, w, c) = self.level_shape(l);
                if l + 1 < self.levels {
                    (h, w, c / 2)
                } else {
                    (h, w, c)
                }
            })
            .collect()
    }

    pub fn section_lens(&self) -> Vec<usize> {
        self.section_shapes().iter().map(|(h, w, c)| h * w * c).collect()
    }

    /// Constant coupling scale of a freshly initialized network.
    pub fn initial_scale(&self) -> f64 {
        self.scale_floor + (1.0 - self.scale_floor) * crate::numerics::sigmoid_scalar(self.scale_shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Squeeze,
    Layer(usize),
    Split(usize),
    Emit(usize),
}

struct TapeEntry {
    input: Tensor,
    output: Tensor,
    cache: LayerCache,
}

/// Recorded activations of a forward (latent to image) pass.
pub struct ForwardTrace {
    tape: Vec<TapeEntry>,
}

/// Recorded activations of an inverse (image to latent) pass.
pub struct InverseTrace {
    tape: Vec<TapeEntry>,
}

/// Per-layer diagnostics of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardReport {
    pub image: Tensor,
    pub logdet: f64,
    pub layer_logdets: Vec<(String, f64)>,
    pub min_scale: f64,
    pub max_scale: f64,
}

/// The invertible generator `f = G(z)`.
#[derive(Debug, Clone)]
pub struct MultiscaleFlow {
    config: FlowConfig,
    layers: Vec<Layer>,
    names: Vec<String>,
    program: Vec<Stage>,
    params: ParamStore,
    buffers: ParamStore,
    data_initialized: bool,
}

impl MultiscaleFlow {
    /// Builds a fresh network: identity actnorm, random orthogonal mixing,
    /// and couplings whose last convolution is zero.
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let mut buffers = ParamStore::default();
        let mut layers = Vec::new();
        let mut names = Vec::new();
        let mut program = Vec::new();
        let k = config.kernel;
        for level in 0..config.levels {
            let (_, _, c) = config.level_shape(level);
            program.push(Stage::Squeeze);
            for step in 0..config.steps_per_level {
                let prefix = format!("level{level}.step{step}");

                let act = ActNorm {
                    channels: c,
                    log_scale: params.alloc(format!("{prefix}.actnorm.log_scale"), &[c], || 0.0),
                    offset: params.alloc(format!("{prefix}.actnorm.offset"), &[c], || 0.0),
                };
                program.push(Stage::Layer(layers.len()));
                names.push(format!("{prefix}.actnorm"));
                layers.push(Layer::ActNorm(act));

                // The first mix of a level is replaced by a data-dependent
                // rotation; later ones only rotate within each half so the
                // split still sees that channel ordering.
                let rotation = if step == 0 {
                    random_rotation(c, &mut rng)
                } else {
                    let (p, q) = (c / 2, c - c / 2);
                    let (a, b) = (random_rotation(p, &mut rng), random_rotation(q, &mut rng));
                    DMatrix::from_fn(c, c, |i, j| match (i < p, j < p) {
                        (true, true) => a[(i, j)],
                        (false, false) => b[(i - p, j - p)],
                        _ => 0.0,
                    })
                };
                let mix = InvMix1x1 {
                    channels: c,
                    lower: params.alloc(format!("{prefix}.mix.lower"), &[c, c], || 0.0),
                    upper: params.alloc(format!("{prefix}.mix.upper"), &[c, c], || 0.0),
                    log_diag: params.alloc(format!("{prefix}.mix.log_diag"), &[c], || 0.0),
                    perm: buffers.alloc(format!("{prefix}.mix.perm"), &[c], || 0.0),
                    sign: buffers.alloc(format!("{prefix}.mix.sign"), &[c], || 0.0),
                };
                mix.set_matrix(&rotation, &mut params, &mut buffers);
                program.push(Stage::Layer(layers.len()));
                names.push(format!("{prefix}.mix"));
                layers.push(Layer::Mix(mix));

                let p = c / 2;
                let q = c - p;
                let widths = [(p, config.hidden), (config.hidden, config.hidden), (config.hidden, 2 * q)];
                let mut convs = [ConvSlots { kernel: 0, bias: 0 }; 3];
                for (idx, &(cin, cout)) in widths.iter().enumerate() {
                    let last = idx == 2;
                    let std = (1.0 / (k * k * cin) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    let kernel = params.alloc(format!("{prefix}.coupling.conv{idx}.kernel"), &[k, k, cin, cout], || {
                        if last {
                            0.0
                        } else {
                            normal.sample(&mut rng)
                        }
                    });
                    let bias = params.alloc(format!("{prefix}.coupling.conv{idx}.bias"), &[cout], || 0.0);
                    convs[idx] = ConvSlots { kernel, bias };
                }
                program.push(Stage::Layer(layers.len()));
                names.push(format!("{prefix}.coupling"));
                layers.push(Layer::Coupling(AffineCoupling {
                    channels: c,
                    pass_first: step % 2 == 0,
                    hidden: config.hidden,
                    kernel: k,
                    convs,
                    scale_floor: config.scale_floor,
                    scale_shift: config.scale_shift,
                }));
            }
            program.push(if level + 1 < config.levels { Stage::Split(level) } else { Stage::Emit(level) });
        }
        Ok(MultiscaleFlow { config, layers, names, program, params, buffers, data_initialized: false })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    /// Latent (and image) dimension `n`.
    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.config.image_shape()
    }

    pub fn section_lens(&self) -> Vec<usize> {
        self.config.section_lens()
    }

    pub fn zero_latent(&self) -> LatentVector {
        LatentVector::zeros(&self.section_lens())
    }

    pub fn latent_from_vec(&self, data: Vec<f64>) -> Result<LatentVector> {
        LatentVector::new(data, self.section_lens())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore {
        &mut self.buffers
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn data_initialized(&self) -> bool {
        self.data_initialized
    }

    pub fn set_data_initialized(&mut self, value: bool) {
        self.data_initialized = value;
    }

    fn check_image(&self, f: &Tensor) -> Result<()> {
        let shape = self.image_shape();
        let ok = match f.shape() {
            &[h, w, c] => [h, w, c] == shape,
            &[h, w] => shape[2] == 1 && [h, w] == shape[..2],
            _ => false,
        };
        if !ok {
            return Err(Error::Dimension(format!("expected image shape {:?}, got {:?}", shape, f.shape())));
        }
        Ok(())
    }

    fn check_latent(&self, z: &LatentVector) -> Result<()> {
        if z.len() != self.dim() || z.section_lens() != self.section_lens().as_slice() {
            return Err(Error::Dimension(format!(
                "latent has sections {:?}, flow expects {:?}",
                z.section_lens(),
                self.section_lens()
            )));
        }
        Ok(())
    }

    fn check_finite(&self, t: &Tensor, layer: usize, direction: &str) -> Result<()> {
        match t.first_non_finite() {
            Some(index) => Err(Error::numeric(format!("{} ({direction})", self.names[layer]), index)),
            None => Ok(()),
        }
    }

    fn section_tensor(&self, z: &LatentVector, level: usize) -> Tensor {
        let (h, w, c) = self.config.section_shapes()[level];
        Tensor::new(vec![h, w, c], z.section(level).to_vec()).expect("section shape")
    }

    fn run_forward(
        &self,
        z: &LatentVector,
        mut tape: Option<&mut Vec<TapeEntry>>,
        mut per_layer: Option<&mut Vec<(usize, f64)>>,
    ) -> Result<(Tensor, f64)> {
        self.check_latent(z)?;
        let mut x: Option<Tensor> = None;
        let mut logdet = 0.0;
        for stage in self.program.iter().rev() {
            match *stage {
                Stage::Emit(level) => x = Some(self.section_tensor(z, level)),
                Stage::Split(level) => {
                    let cur = x.take().expect("coarser levels run first");
                    x = Some(concat_channels(&cur, &self.section_tensor(z, level)));
                }
                Stage::Layer(i) => {
                    let input = x.take().expect("layer input");
                    let (y, ld, cache) = self.layers[i].forward(&input, &self.params, &self.buffers);
                    self.check_finite(&y, i, "forward")?;
                    logdet += ld;
                    if let Some(per) = per_layer.as_deref_mut() {
                        per.push((i, ld));
                    }
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(TapeEntry { input, output: y.clone(), cache });
                    }
                    x = Some(y);
                }
                Stage::Squeeze => x = Some(unsqueeze(&x.take().expect("squeeze input"))),
            }
        }
        Ok((x.expect("non-empty program"), logdet))
    }

    /// `f = G(z)` and `ln|det ∂G/∂z|`.
    pub fn forward(&self, z: &LatentVector) -> Result<(Tensor, f64)> {
        self.run_forward(z, None, None)
    }

    /// Forward pass keeping what [`MultiscaleFlow::pullback`] needs.
    pub fn forward_traced(&self, z: &LatentVector) -> Result<(Tensor, f64, ForwardTrace)> {
        let mut tape = Vec::with_capacity(self.layers.len());
        let (f, ld) = self.run_forward(z, Some(&mut tape), None)?;
        Ok((f, ld, ForwardTrace { tape }))
    }

    /// Forward pass with per-layer log-determinants and coupling scale range.
    pub fn forward_report(&self, z: &LatentVector) -> Result<ForwardReport> {
        let mut tape = Vec::new();
        let mut per = Vec::new();
        let (image, logdet) = self.run_forward(z, Some(&mut tape), Some(&mut per))?;
        let mut min_scale = f64::INFINITY;
        let mut max_scale = f64::NEG_INFINITY;
        for ((i, _), entry) in per.iter().zip(&tape) {
            if let Layer::Coupling(c) = &self.layers[*i] {
                for s in c.scales(&entry.input, &self.params) {
                    min_scale = min_scale.min(s);
                    max_scale = max_scale.max(s);
                }
            }
        }
        let layer_logdets = per.into_iter().map(|(i, ld)| (self.names[i].clone(), ld)).collect();
        Ok(ForwardReport { image, logdet, layer_logdets, min_scale, max_scale })
    }

    /// `Jᵀ u` where `J = ∂G/∂z` at the traced point.
    pub fn pullback(&self, trace: &ForwardTrace, cotangent: &Tensor) -> Result<LatentVector> {
        self.check_image(cotangent)?;
        let mut ct = cotangent.clone().reshape(&self.image_shape())?;
        let mut sections: Vec<Vec<f64>> = vec![Vec::new(); self.config.levels];
        let mut entries = trace.tape.iter().rev();
        for stage in &self.program {
            match *stage {
                Stage::Squeeze => ct = squeeze(&ct),
                Stage::Layer(i) => {
                    let e = entries.next().expect("trace matches program");
                    ct = self.layers[i].forward_vjp(&e.input, &e.cache, &ct, &self.params, &self.buffers);
                }
                Stage::Split(level) => {
                    let (keep, emit) = split_channels(&ct);
                    sections[level] = emit.into_data();
                    ct = keep;
                }
                Stage::Emit(level) => sections[level] = std::mem::replace(&mut ct, Tensor::zeros(&[0])).into_data(),
            }
        }
        self.latent_from_vec(sections.concat())
    }

    /// Cotangent on `z` of `⟨cotangent, G(z)⟩`.
    pub fn vjp_latent(&self, z: &LatentVector, cotangent: &Tensor) -> Result<LatentVector> {
        let (_, _, trace) = self.forward_traced(z)?;
        self.pullback(&trace, cotangent)
    }

    fn run_inverse(&self, f: &Tensor, mut tape: Option<&mut Vec<TapeEntry>>) -> Result<(LatentVector, f64)> {
        self.check_image(f)?;
        let mut x = f.clone().reshape(&self.image_shape())?;
        let mut sections: Vec<Vec<f64>> = vec![Vec::new(); self.config.levels];
        let mut logdet = 0.0;
        for stage in &self.program {
            match *stage {
                Stage::Squeeze => x = squeeze(&x),
                Stage::Layer(i) => {
                    let (out, ld, cache) = self.layers[i].inverse(&x, &self.params, &self.buffers);
                    self.check_finite(&out, i, "inverse")?;
                    logdet += ld;
                    let input = std::mem::replace(&mut x, out);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(TapeEntry { input, output: x.clone(), cache });
                    }
                }
                Stage::Split(level) => {
                    let (keep, emit) = split_channels(&x);
                    sections[level] = emit.into_data();
                    x = keep;
                }
                Stage::Emit(level) => sections[level] = std::mem::replace(&mut x, Tensor::zeros(&[0])).into_data(),
            }
        }
        Ok((self.latent_from_vec(sections.concat())?, logdet))
    }

    /// `z = G⁻¹(f)` and `ln|det ∂G/∂z|` at that `z`.
    pub fn inverse(&self, f: &Tensor) -> Result<(LatentVector, f64)> {
        self.run_inverse(f, None)
    }

    pub fn inverse_traced(&self, f: &Tensor) -> Result<(LatentVector, f64, InverseTrace)> {
        let mut tape = Vec::with_capacity(self.layers.len());
        let (z, ld) = self.run_inverse(f, Some(&mut tape))?;
        Ok((z, ld, InverseTrace { tape }))
    }

    /// Pulls `(ct_z, ct_logdet)` back through a traced inverse pass.
    /// Parameter cotangents are added to `grads` (same layout as
    /// [`MultiscaleFlow::params`]); the image cotangent is returned.
    pub fn inverse_backward(
        &self,
        trace: &InverseTrace,
        ct_z: &LatentVector,
        ct_logdet: f64,
        grads: &mut [f64],
    ) -> Result<Tensor> {
        self.check_latent(ct_z)?;
        if grads.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "gradient buffer has {} entries, flow has {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let mut ct: Option<Tensor> = None;
        let mut entries = trace.tape.iter().rev();
        for stage in self.program.iter().rev() {
            match *stage {
                Stage::Emit(level) => ct = Some(self.section_tensor(ct_z, level)),
                Stage::Split(level) => {
                    let cur = ct.take().expect("coarser levels first");
                    ct = Some(concat_channels(&cur, &self.section_tensor(ct_z, level)));
                }
                Stage::Layer(i) => {
                    let e = entries.next().expect("trace matches program");
                    let cur = ct.take().expect("layer cotangent");
                    ct = Some(self.layers[i].inverse_backward(
                        &e.input,
                        &e.output,
                        &e.cache,
                        &cur,
                        ct_logdet,
                        &self.params,
                        &self.buffers,
                        grads,
                    ));
                }
                Stage::Squeeze => ct = Some(unsqueeze(&ct.take().expect("cotangent"))),
            }
        }
        Ok(ct.expect("non-empty program"))
    }

    /// Draws `z` from the Laplacian prior scaled by `temperature` and returns `G(z)`.
    pub fn sample(&self, rng: &mut impl Rng, temperature: f64) -> Result<Tensor> {
        if !(temperature >= 0.0) {
            return Err(Error::Config(format!("temperature must be non-negative, got {temperature}")));
        }
        let z = LaplacianPrior.sample(self.dim(), rng);
        let z: Vec<f64> = z.into_iter().map(|v| v * temperature).collect();
        Ok(self.forward(&self.latent_from_vec(z)?)?.0)
    }

    /// `log p_f(f) = log p_z(z) - ln|det ∂G/∂z|` at `z = G⁻¹(f)`.
    pub fn log_prob(&self, f: &Tensor) -> Result<f64> {
        let (z, logdet) = self.inverse(f)?;
        Ok(LaplacianPrior.log_prob(z.as_slice()) - logdet)
    }

    /// Data-dependent initialization from a batch: every actnorm layer is
    /// set so the inverse pass produces zero-mean, unit-variance channels,
    /// and the first mix of each splitting level becomes the
    /// principal-component rotation of its input, so each split emits the
    /// lowest-variance channel directions.
    pub fn initialize_from_data(&mut self, batch: &[Tensor]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Config("data-dependent initialization needs a non-empty batch".into()));
        }
        let mut xs = Vec::with_capacity(batch.len());
        for f in batch {
            self.check_image(f)?;
            xs.push(f.clone().reshape(&self.image_shape())?);
        }
        // The last level emits every channel, so ordering its channels buys
        // no compressibility; its random rotation is kept.
        let mut level_start = false;
        let mut level = 0;
        for stage in self.program.clone() {
            match stage {
                Stage::Squeeze => {
                    xs = xs.iter().map(squeeze).collect();
                    level += 1;
                    level_start = level < self.config.levels;
                }
                Stage::Layer(i) => {
                    match &self.layers[i] {
                        Layer::ActNorm(a) => a.initialize_from(&xs, &mut self.params),
                        Layer::Mix(m) if level_start => {
                            m.initialize_from(&xs, &mut self.params, &mut self.buffers);
                            level_start = false;
                        }
                        _ => {}
                    }
                    let mut next = Vec::with_capacity(xs.len());
                    for x in &xs {
                        let (y, _, _) = self.layers[i].inverse(x, &self.params, &self.buffers);
                        self.check_finite(&y, i, "data init")?;
                        next.push(y);
                    }
                    xs = next;
                }
                Stage::Split(_) => xs = xs.iter().map(|x| split_channels(x).0).collect(),
                Stage::Emit(_) => break,
            }
        }
        self.data_initialized = true;
        Ok(())
    }

    /// Adds Gaussian noise of the given scale to every trainable parameter,
    /// including the zero-initialized output convolutions. Test and
    /// benchmark helper for exercising non-trivial couplings.
    pub fn perturb_params(&mut self, rng: &mut impl Rng, scale: f64) {
        let normal = Normal::new(0.0, scale).expect("finite scale");
        let slots = self.params.slots().to_vec();
        for slot in slots {
            // Mixing factors stay triangular; only their free entries move.
            let c = if slot.name.ends_with(".mix.lower") || slot.name.ends_with(".mix.upper") {
                Some(slot.shape[0])
            } else {
                None
            };
            let lower = slot.name.ends_with(".lower");
            for (idx, v) in self.params.values_mut()[slot.range()].iter_mut().enumerate() {
                if let Some(c) = c {
                    let (i, j) = (idx / c, idx % c);
                    if (lower && i <= j) || (!lower && i >= j) {
                        continue;
                    }
                }
                *v += normal.sample(rng);
            }
        }
    }

    /// Multiplies the scale of every actnorm layer by `factor`.
    pub fn scale_actnorm(&mut self, factor: f64) {
        let slots: Vec<ParamSlot> =
            self.params.slots().iter().filter(|s| s.name.ends_with(".actnorm.log_scale")).cloned().collect();
        for s in slots {
            for v in &mut self.params.values_mut()[s.range()] {
                *v += factor.ln();
            }
        }
    }

    /// Total number of components passing through actnorm layers.
    pub fn actnorm_component_count(&self) -> usize {
        (0..self.config.levels)
            .map(|l| {
                let (h, w, c) = self.config.level_shape(l);
                h * w * c * self.config.steps_per_level
            })
            .sum()
    }

    /// Total number of components transformed (not passed through) by couplings.
    pub fn coupling_transformed_count(&self) -> usize {
        self.actnorm_component_count() / 2
    }
}
