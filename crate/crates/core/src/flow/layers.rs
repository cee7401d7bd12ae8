//! Invertible layers. `forward` is the generative direction (latent side to
//! image side); `inverse` is the normalizing direction used for training.
//! Both directions report `ln|det|` of the forward map.

use nalgebra::DMatrix;

use super::reshape::{gather_channels, scatter_channels};
use super::store::ParamStore;
use crate::numerics::{
    conv2d_backward_input, conv2d_backward_params, conv2d_raw, sigmoid_scalar, softplus_scalar, ConvShape,
    Tensor,
};

/// Smallest per-channel spread actnorm will whiten to unit variance; caps the
/// initial gain of near-constant channels.
pub const ACTNORM_MIN_STD: f64 = 1e-2;

/// Intermediate values kept by a layer for its pullback.
#[derive(Debug, Clone)]
pub enum LayerCache {
    None,
    Coupling(CouplingCache),
}

#[derive(Debug, Clone)]
pub struct CouplingCache {
    pre0: Vec<f64>,
    act0: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    /// Sigmoid of the shifted raw scale.
    sig: Vec<f64>,
    gamma: Vec<f64>,
    /// Pass-through half, the subnet input.
    x_pass: Vec<f64>,
    /// Transformed half on the latent side (input of forward, output of inverse).
    x_trans: Vec<f64>,
}

/// Per-channel affine map `y = x * exp(log_scale) + offset`.
#[derive(Debug, Clone)]
pub struct ActNorm {
    pub channels: usize,
    pub log_scale: usize,
    pub offset: usize,
}

/// Channel mixing `y = W x` with `W = P L U`; `L` unit lower triangular,
/// `U` upper triangular with diagonal `sign * exp(log_diag)`.
#[derive(Debug, Clone)]
pub struct InvMix1x1 {
    pub channels: usize,
    pub lower: usize,
    pub upper: usize,
    pub log_diag: usize,
    /// Buffer slots: `perm[i]` is the row of `L U` that becomes row `i` of `W`.
    pub perm: usize,
    pub sign: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSlots {
    pub kernel: usize,
    pub bias: usize,
}

/// Affine coupling with scale `γ = floor + (1 - floor) * sigmoid(s + shift)`.
#[derive(Debug, Clone)]
pub struct AffineCoupling {
    pub channels: usize,
    /// Whether the first half of the channels passes through unchanged.
    pub pass_first: bool,
    pub hidden: usize,
    pub kernel: usize,
    pub convs: [ConvSlots; 3],
    pub scale_floor: f64,
    pub scale_shift: f64,
}

#[derive(Debug, Clone)]
pub enum Layer {
    ActNorm(ActNorm),
    Mix(InvMix1x1),
    Coupling(AffineCoupling),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::ActNorm(_) => "actnorm",
            Layer::Mix(_) => "mix1x1",
            Layer::Coupling(_) => "coupling",
        }
    }

    pub fn forward(&self, x: &Tensor, p: &ParamStore, b: &ParamStore) -> (Tensor, f64, LayerCache) {
        match self {
            Layer::ActNorm(l) => {
                let (y, ld) = l.forward(x, p);
                (y, ld, LayerCache::None)
            }
            Layer::Mix(l) => {
                let (y, ld) = l.forward(x, p, b);
                (y, ld, LayerCache::None)
            }
            Layer::Coupling(l) => {
                let (y, ld, c) = l.forward(x, p);
                (y, ld, LayerCache::Coupling(c))
            }
        }
    }

    pub fn inverse(&self, y: &Tensor, p: &ParamStore, b: &ParamStore) -> (Tensor, f64, LayerCache) {
        match self {
            Layer::ActNorm(l) => {
                let (x, ld) = l.inverse(y, p);
                (x, ld, LayerCache::None)
            }
            Layer::Mix(l) => {
                let (x, ld) = l.inverse(y, p, b);
                (x, ld, LayerCache::None)
            }
            Layer::Coupling(l) => {
                let (x, ld, c) = l.inverse(y, p);
                (x, ld, LayerCache::Coupling(c))
            }
        }
    }

    /// Pullback of the forward map with respect to its input.
    pub fn forward_vjp(&self, x: &Tensor, cache: &LayerCache, ct_y: &Tensor, p: &ParamStore, b: &ParamStore) -> Tensor {
        match (self, cache) {
            (Layer::ActNorm(l), _) => l.forward_vjp(ct_y, p),
            (Layer::Mix(l), _) => l.forward_vjp(ct_y, p, b),
            (Layer::Coupling(l), LayerCache::Coupling(c)) => l.forward_vjp(x, c, ct_y, p),
            (Layer::Coupling(_), LayerCache::None) => unreachable!("coupling pullback needs its cache"),
        }
    }

    /// Pullback of `(inverse output, ct_logdet * logdet)` with respect to the
    /// inverse input; parameter cotangents accumulate into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn inverse_backward(
        &self,
        y: &Tensor,
        x: &Tensor,
        cache: &LayerCache,
        ct_x: &Tensor,
        ct_logdet: f64,
        p: &ParamStore,
        b: &ParamStore,
        grads: &mut [f64],
    ) -> Tensor {
        match (self, cache) {
            (Layer::ActNorm(l), _) => l.inverse_backward(x, ct_x, ct_logdet, p, grads),
            (Layer::Mix(l), _) => l.inverse_backward(y, x, ct_x, ct_logdet, p, b, grads),
            (Layer::Coupling(l), LayerCache::Coupling(c)) => l.inverse_backward(y, c, ct_x, ct_logdet, p, grads),
            (Layer::Coupling(_), LayerCache::None) => unreachable!("coupling pullback needs its cache"),
        }
    }
}

impl ActNorm {
    fn forward(&self, x: &Tensor, p: &ParamStore) -> (Tensor, f64) {
        let (h, w, _) = x.dims3().expect("image tensor");
        let ls = p.get(self.log_scale);
        let off = p.get(self.offset);
        let scale: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(self.channels) {
            for ((v, s), o) in px.iter_mut().zip(&scale).zip(off) {
                *v = *v * s + o;
            }
        }
        (y, (h * w) as f64 * ls.iter().sum::<f64>())
    }

    fn inverse(&self, y: &Tensor, p: &ParamStore) -> (Tensor, f64) {
        let (h, w, _) = y.dims3().expect("image tensor");
        let ls = p.get(self.log_scale);
        let off = p.get(self.offset);
        let inv: Vec<f64> = ls.iter().map(|v| (-v).exp()).collect();
        let mut x = y.clone();
        for px in x.data_mut().chunks_exact_mut(self.channels) {
            for ((v, s), o) in px.iter_mut().zip(&inv).zip(off) {
                *v = (*v - o) * s;
            }
        }
        (x, (h * w) as f64 * ls.iter().sum::<f64>())
    }

    fn forward_vjp(&self, ct_y: &Tensor, p: &ParamStore) -> Tensor {
        let scale: Vec<f64> = p.get(self.log_scale).iter().map(|v| v.exp()).collect();
        let mut ct = ct_y.clone();
        for px in ct.data_mut().chunks_exact_mut(self.channels) {
            for (v, s) in px.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
        ct
    }

    fn inverse_backward(&self, x: &Tensor, ct_x: &Tensor, ct_logdet: f64, p: &ParamStore, grads: &mut [f64]) -> Tensor {
        let (h, w, c) = x.dims3().expect("image tensor");
        let inv: Vec<f64> = p.get(self.log_scale).iter().map(|v| (-v).exp()).collect();
        let mut g_ls = vec![ct_logdet * (h * w) as f64; c];
        let mut g_off = vec![0.0; c];
        let mut ct_y = ct_x.clone();
        for (cy, xp) in ct_y.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
            for ch in 0..c {
                let u = cy[ch];
                g_ls[ch] -= u * xp[ch];
                g_off[ch] -= u * inv[ch];
                cy[ch] = u * inv[ch];
            }
        }
        add_into(grads, p, self.log_scale, &g_ls);
        add_into(grads, p, self.offset, &g_off);
        ct_y
    }

    /// Sets the layer so the inverse maps the given activations to zero mean
    /// and unit variance per channel.
    pub fn initialize_from(&self, ys: &[Tensor], p: &mut ParamStore) {
        let c = self.channels;
        let mut count = 0usize;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for y in ys {
            for px in y.data().chunks_exact(c) {
                count += 1;
                for ch in 0..c {
                    sum[ch] += px[ch];
                    sq[ch] += px[ch] * px[ch];
                }
            }
        }
        let n = count.max(1) as f64;
        let mut ls = vec![0.0; c];
        let mut off = vec![0.0; c];
        for ch in 0..c {
            let mean = sum[ch] / n;
            let var = (sq[ch] / n - mean * mean).max(0.0);
            off[ch] = mean;
            ls[ch] = var.sqrt().max(ACTNORM_MIN_STD).ln();
        }
        p.get_mut(self.log_scale).copy_from_slice(&ls);
        p.get_mut(self.offset).copy_from_slice(&off);
    }
}

fn add_into(grads: &mut [f64], p: &ParamStore, slot: usize, g: &[f64]) {
    for (dst, v) in grads[p.slot(slot).range()].iter_mut().zip(g) {
        *dst += v;
    }
}

impl InvMix1x1 {
    /// Stores the invertible matrix `m` (generative direction) in factored form.
    pub(crate) fn set_matrix(&self, m: &DMatrix<f64>, p: &mut ParamStore, b: &mut ParamStore) {
        let c = self.channels;
        let (perm, l, u) = lu_factor(m);
        let lo = p.get_mut(self.lower);
        for i in 0..c {
            for j in 0..i {
                lo[i * c + j] = l[(i, j)];
            }
        }
        let up = p.get_mut(self.upper);
        for i in 0..c {
            for j in i + 1..c {
                up[i * c + j] = u[(i, j)];
            }
        }
        let ld = p.get_mut(self.log_diag);
        for i in 0..c {
            ld[i] = u[(i, i)].abs().ln();
        }
        let sg = b.get_mut(self.sign);
        for i in 0..c {
            sg[i] = u[(i, i)].signum();
        }
        let pm = b.get_mut(self.perm);
        for i in 0..c {
            pm[i] = perm[i] as f64;
        }
    }

    /// Orthogonal matrix whose inverse maps the inputs `xs` onto their
    /// channel principal components in order of decreasing variance. Each
    /// component is signed so its largest entry is positive. Left unchanged
    /// when there are fewer than four samples per channel.
    pub(crate) fn initialize_from(&self, xs: &[Tensor], p: &mut ParamStore, b: &mut ParamStore) {
        let c = self.channels;
        let mut mean = vec![0.0; c];
        let mut count = 0usize;
        for x in xs {
            for px in x.data().chunks_exact(c) {
                count += 1;
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
        }
        // Too few samples for a full-rank covariance: keep the current rotation.
        if count < 4 * c {
            return;
        }
        let n = count as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = DMatrix::<f64>::zeros(c, c);
        for x in xs {
            for px in x.data().chunks_exact(c) {
                for i in 0..c {
                    for j in 0..c {
                        cov[(i, j)] += (px[i] - mean[i]) * (px[j] - mean[j]) / n;
                    }
                }
            }
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut q = DMatrix::zeros(c, c);
        for (col, &k) in order.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            let lead = v.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
            let s = if lead < 0.0 { -1.0 } else { 1.0 };
            for r in 0..c {
                q[(r, col)] = s * v[r];
            }
        }
        self.set_matrix(&q, p, b);
    }

    fn factors(&self, p: &ParamStore, b: &ParamStore) -> (DMatrix<f64>, DMatrix<f64>) {
        let c = self.channels;
        let lo = p.get(self.lower);
        let up = p.get(self.upper);
        let ld = p.get(self.log_diag);
        let sign = b.get(self.sign);
        let l = DMatrix::from_fn(c, c, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => lo[i * c + j],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        });
        let u = DMatrix::from_fn(c, c, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => up[i * c + j],
            std::cmp::Ordering::Equal => sign[i] * ld[i].exp(),
            std::cmp::Ordering::Greater => 0.0,
        });
        (l, u)
    }

    pub fn matrix(&self, p: &ParamStore, b: &ParamStore) -> DMatrix<f64> {
        let (l, u) = self.factors(p, b);
        let lu = l * u;
        let perm = b.get(self.perm);
        DMatrix::from_fn(self.channels, self.channels, |i, j| lu[(perm[i] as usize, j)])
    }

    fn apply(m: &DMatrix<f64>, x: &Tensor) -> Tensor {
        let c = m.nrows();
        let mut y = Tensor::zeros(x.shape());
        for (yp, xp) in y.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
            for (i, out) in yp.iter_mut().enumerate() {
                *out = (0..c).map(|j| m[(i, j)] * xp[j]).sum();
            }
        }
        y
    }

    fn logdet(&self, x: &Tensor, p: &ParamStore) -> f64 {
        let (h, w, _) = x.dims3().expect("image tensor");
        (h * w) as f64 * p.get(self.log_diag).iter().sum::<f64>()
    }

    fn forward(&self, x: &Tensor, p: &ParamStore, b: &ParamStore) -> (Tensor, f64) {
        let m = self.matrix(p, b);
        (Self::apply(&m, x), self.logdet(x, p))
    }

    fn inverse(&self, y: &Tensor, p: &ParamStore, b: &ParamStore) -> (Tensor, f64) {
        let inv = self.matrix(p, b).try_inverse().expect("LU-factored mixing matrix is invertible");
        (Self::apply(&inv, y), self.logdet(y, p))
    }

    fn forward_vjp(&self, ct_y: &Tensor, p: &ParamStore, b: &ParamStore) -> Tensor {
        Self::apply(&self.matrix(p, b).transpose(), ct_y)
    }

    #[allow(clippy::too_many_arguments)]
    fn inverse_backward(
        &self,
        y: &Tensor,
        x: &Tensor,
        ct_x: &Tensor,
        ct_logdet: f64,
        p: &ParamStore,
        b: &ParamStore,
        grads: &mut [f64],
    ) -> Tensor {
        let c = self.channels;
        let (h, w, _) = y.dims3().expect("image tensor");
        let inv = self.matrix(p, b).try_inverse().expect("invertible");
        let ct_y = Self::apply(&inv.transpose(), ct_x);
        // x = W⁻¹ y  ⇒  ∂/∂W = -ct_y xᵀ summed over pixels.
        let mut g_w = DMatrix::<f64>::zeros(c, c);
        for (cy, xp) in ct_y.data().chunks_exact(c).zip(x.data().chunks_exact(c)) {
            for i in 0..c {
                for j in 0..c {
                    g_w[(i, j)] -= cy[i] * xp[j];
                }
            }
        }
        let perm = b.get(self.perm);
        let mut g_m = DMatrix::<f64>::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                g_m[(perm[i] as usize, j)] = g_w[(i, j)];
            }
        }
        let (l, u) = self.factors(p, b);
        let g_l = &g_m * u.transpose();
        let g_u = l.transpose() * &g_m;
        let mut g_lower = vec![0.0; c * c];
        let mut g_upper = vec![0.0; c * c];
        let mut g_diag = vec![ct_logdet * (h * w) as f64; c];
        for i in 0..c {
            for j in 0..c {
                if i > j {
                    g_lower[i * c + j] = g_l[(i, j)];
                } else if i < j {
                    g_upper[i * c + j] = g_u[(i, j)];
                }
            }
            g_diag[i] += g_u[(i, i)] * u[(i, i)];
        }
        add_into(grads, p, self.lower, &g_lower);
        add_into(grads, p, self.upper, &g_upper);
        add_into(grads, p, self.log_diag, &g_diag);
        ct_y
    }
}

/// LU factorization with partial pivoting, `A[i] = (L U)[perm[i]]`.
pub(crate) fn lu_factor(a: &DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut rows: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs())).unwrap();
        m.swap_rows(k, piv);
        rows.swap(k, piv);
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            m[(i, k)] = f;
            for j in k + 1..n {
                let v = m[(k, j)];
                m[(i, j)] -= f * v;
            }
        }
    }
    let l = DMatrix::from_fn(n, n, |i, j| if i > j { m[(i, j)] } else if i == j { 1.0 } else { 0.0 });
    let u = DMatrix::from_fn(n, n, |i, j| if i <= j { m[(i, j)] } else { 0.0 });
    // Row r of LU is row rows[r] of A; invert to find where each row of A lives.
    let mut perm = vec![0; n];
    for (r, &orig) in rows.iter().enumerate() {
        perm[orig] = r;
    }
    (perm, l, u)
}

struct SubnetOut {
    pre0: Vec<f64>,
    act0: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    raw: Vec<f64>,
}

impl AffineCoupling {
    fn halves(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let p = self.channels / 2;
        if self.pass_first {
            (0..p, p..self.channels)
        } else {
            (p..self.channels, 0..p)
        }
    }

    fn shapes(&self, h: usize, w: usize) -> [ConvShape; 3] {
        let p = self.channels / 2;
        let q = self.channels - p;
        let k = self.kernel;
        [
            ConvShape { height: h, width: w, in_channels: p, out_channels: self.hidden, kernel: k },
            ConvShape { height: h, width: w, in_channels: self.hidden, out_channels: self.hidden, kernel: k },
            ConvShape { height: h, width: w, in_channels: self.hidden, out_channels: 2 * q, kernel: k },
        ]
    }

    fn subnet(&self, xp: &[f64], h: usize, w: usize, p: &ParamStore) -> SubnetOut {
        let s = self.shapes(h, w);
        let hw = h * w;
        let mut pre0 = vec![0.0; hw * self.hidden];
        conv2d_raw(xp, &s[0], p.get(self.convs[0].kernel), p.get(self.convs[0].bias), &mut pre0);
        let act0: Vec<f64> = pre0.iter().map(|&v| softplus_scalar(v)).collect();
        let mut pre1 = vec![0.0; hw * self.hidden];
        conv2d_raw(&act0, &s[1], p.get(self.convs[1].kernel), p.get(self.convs[1].bias), &mut pre1);
        let act1: Vec<f64> = pre1.iter().map(|&v| softplus_scalar(v)).collect();
        let mut raw = vec![0.0; hw * s[2].out_channels];
        conv2d_raw(&act1, &s[2], p.get(self.convs[2].kernel), p.get(self.convs[2].bias), &mut raw);
        SubnetOut { pre0, act0, pre1, act1, raw }
    }

    /// Splits the subnet output into per-element sigmoid, scale and shift.
    fn scale_shift(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let q = self.channels - self.channels / 2;
        let n = raw.len() / 2;
        let mut sig = Vec::with_capacity(n);
        let mut gamma = Vec::with_capacity(n);
        let mut shift = Vec::with_capacity(n);
        for px in raw.chunks_exact(2 * q) {
            for k in 0..q {
                let s = sigmoid_scalar(px[k] + self.scale_shift);
                sig.push(s);
                gamma.push(self.scale_floor + (1.0 - self.scale_floor) * s);
                shift.push(px[q + k]);
            }
        }
        (sig, gamma, shift)
    }

    fn forward(&self, x: &Tensor, p: &ParamStore) -> (Tensor, f64, CouplingCache) {
        let (h, w, c) = x.dims3().expect("image tensor");
        let (pass, trans) = self.halves();
        let xp = gather_channels(x.data(), c, pass);
        let xt = gather_channels(x.data(), c, trans.clone());
        let net = self.subnet(&xp, h, w, p);
        let (sig, gamma, shift) = self.scale_shift(&net.raw);
        let yt: Vec<f64> = xt.iter().zip(&gamma).zip(&shift).map(|((x, g), t)| x * g + t).collect();
        let logdet = gamma.iter().map(|g| g.ln()).sum();
        let mut y = x.clone();
        scatter_channels(y.data_mut(), c, trans, &yt);
        let cache = CouplingCache {
            pre0: net.pre0,
            act0: net.act0,
            pre1: net.pre1,
            act1: net.act1,
            sig,
            gamma,
            x_pass: xp,
            x_trans: xt,
        };
        (y, logdet, cache)
    }

    fn inverse(&self, y: &Tensor, p: &ParamStore) -> (Tensor, f64, CouplingCache) {
        let (h, w, c) = y.dims3().expect("image tensor");
        let (pass, trans) = self.halves();
        let yp = gather_channels(y.data(), c, pass);
        let yt = gather_channels(y.data(), c, trans.clone());
        let net = self.subnet(&yp, h, w, p);
        let (sig, gamma, shift) = self.scale_shift(&net.raw);
        let xt: Vec<f64> = yt.iter().zip(&gamma).zip(&shift).map(|((y, g), t)| (y - t) / g).collect();
        let logdet = gamma.iter().map(|g| g.ln()).sum();
        let mut x = y.clone();
        scatter_channels(x.data_mut(), c, trans, &xt);
        let cache = CouplingCache {
            pre0: net.pre0,
            act0: net.act0,
            pre1: net.pre1,
            act1: net.act1,
            sig,
            gamma,
            x_pass: yp,
            x_trans: xt,
        };
        (x, logdet, cache)
    }

    /// Backpropagates cotangents on (γ, t) to the pass-through input,
    /// optionally accumulating parameter cotangents.
    #[allow(clippy::too_many_arguments)]
    fn subnet_backward(
        &self,
        cache: &CouplingCache,
        g_gamma: &[f64],
        g_shift: &[f64],
        h: usize,
        w: usize,
        p: &ParamStore,
        grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let s = self.shapes(h, w);
        let q = self.channels - self.channels / 2;
        let hw = h * w;
        let dgamma = 1.0 - self.scale_floor;
        let mut g_raw = vec![0.0; hw * 2 * q];
        for (pix, out) in g_raw.chunks_exact_mut(2 * q).enumerate() {
            for k in 0..q {
                let e = pix * q + k;
                let sig = cache.sig[e];
                out[k] = g_gamma[e] * dgamma * sig * (1.0 - sig);
                out[q + k] = g_shift[e];
            }
        }
        let mut g_act1 = vec![0.0; hw * self.hidden];
        conv2d_backward_input(&g_raw, &s[2], p.get(self.convs[2].kernel), &mut g_act1);
        let g_pre1: Vec<f64> = g_act1.iter().zip(&cache.pre1).map(|(g, &a)| g * sigmoid_scalar(a)).collect();
        let mut g_act0 = vec![0.0; hw * self.hidden];
        conv2d_backward_input(&g_pre1, &s[1], p.get(self.convs[1].kernel), &mut g_act0);
        let g_pre0: Vec<f64> = g_act0.iter().zip(&cache.pre0).map(|(g, &a)| g * sigmoid_scalar(a)).collect();
        let mut g_xp = vec![0.0; hw * s[0].in_channels];
        conv2d_backward_input(&g_pre0, &s[0], p.get(self.convs[0].kernel), &mut g_xp);

        if let Some(grads) = grads {
            let stages: [(&[f64], &[f64]); 3] = [(&cache.x_pass, &g_pre0), (&cache.act0, &g_pre1), (&cache.act1, &g_raw)];
            for ((input, g_out), (slots, shape)) in stages.into_iter().zip(self.convs.iter().zip(&s)) {
                let kr = p.slot(slots.kernel).range();
                let br = p.slot(slots.bias).range();
                // Kernel and bias slots are allocated back to back.
                debug_assert_eq!(kr.end, br.start);
                let (gk, gb) = grads[kr.start..br.end].split_at_mut(kr.len());
                conv2d_backward_params(input, g_out, shape, gk, gb);
            }
        }
        g_xp
    }

    fn forward_vjp(&self, x: &Tensor, cache: &CouplingCache, ct_y: &Tensor, p: &ParamStore) -> Tensor {
        let (h, w, c) = x.dims3().expect("image tensor");
        let (pass, trans) = self.halves();
        let ct_yt = gather_channels(ct_y.data(), c, trans.clone());
        let ct_xt: Vec<f64> = ct_yt.iter().zip(&cache.gamma).map(|(u, g)| u * g).collect();
        let g_gamma: Vec<f64> = ct_yt.iter().zip(&cache.x_trans).map(|(u, x)| u * x).collect();
        let g_xp = self.subnet_backward(cache, &g_gamma, &ct_yt, h, w, p, None);
        let mut ct_x = ct_y.clone();
        scatter_channels(ct_x.data_mut(), c, trans, &ct_xt);
        let k = pass.len();
        for (px, g) in ct_x.data_mut().chunks_exact_mut(c).zip(g_xp.chunks_exact(k)) {
            for (v, gv) in px[pass.clone()].iter_mut().zip(g) {
                *v += gv;
            }
        }
        ct_x
    }

    fn inverse_backward(
        &self,
        y: &Tensor,
        cache: &CouplingCache,
        ct_x: &Tensor,
        ct_logdet: f64,
        p: &ParamStore,
        grads: &mut [f64],
    ) -> Tensor {
        let (h, w, c) = y.dims3().expect("image tensor");
        let (pass, trans) = self.halves();
        let ct_xt = gather_channels(ct_x.data(), c, trans.clone());
        // x_t = (y_t - t) / γ,  logdet = Σ ln γ
        let mut ct_yt = Vec::with_capacity(ct_xt.len());
        let mut g_shift = Vec::with_capacity(ct_xt.len());
        let mut g_gamma = Vec::with_capacity(ct_xt.len());
        for ((u, g), x) in ct_xt.iter().zip(&cache.gamma).zip(&cache.x_trans) {
            let r = u / g;
            ct_yt.push(r);
            g_shift.push(-r);
            g_gamma.push((ct_logdet - u * x) / g);
        }
        let g_yp = self.subnet_backward(cache, &g_gamma, &g_shift, h, w, p, Some(grads));
        let mut ct_y = ct_x.clone();
        scatter_channels(ct_y.data_mut(), c, trans, &ct_yt);
        let k = pass.len();
        for (px, g) in ct_y.data_mut().chunks_exact_mut(c).zip(g_yp.chunks_exact(k)) {
            for (v, gv) in px[pass.clone()].iter_mut().zip(g) {
                *v += gv;
            }
        }
        ct_y
    }

    /// Every scale produced for input `x` (forward direction).
    pub fn scales(&self, x: &Tensor, p: &ParamStore) -> Vec<f64> {
        let (h, w, c) = x.dims3().expect("image tensor");
        let (pass, _) = self.halves();
        let xp = gather_channels(x.data(), c, pass);
        let net = self.subnet(&xp, h, w, p);
        self.scale_shift(&net.raw).1
    }
}
