//! Bijective reshuffles between levels: squeeze, channel split and concat.

use crate::numerics::Tensor;

/// `(h, w, c) -> (h/2, w/2, 4c)`; channel index `(2*di + dj)*c + ch`.
pub fn squeeze(x: &Tensor) -> Tensor {
    let (h, w, c) = x.dims3().expect("image tensor");
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[h2, w2, 4 * c]);
    let src = x.data();
    let dst = out.data_mut();
    for i in 0..h2 {
        for j in 0..w2 {
            for di in 0..2 {
                for dj in 0..2 {
                    let s = ((2 * i + di) * w + 2 * j + dj) * c;
                    let d = (i * w2 + j) * 4 * c + (2 * di + dj) * c;
                    dst[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    out
}

/// Inverse of [`squeeze`].
pub fn unsqueeze(x: &Tensor) -> Tensor {
    let (h2, w2, c4) = x.dims3().expect("image tensor");
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = Tensor::zeros(&[h, w, c]);
    let src = x.data();
    let dst = out.data_mut();
    for i in 0..h2 {
        for j in 0..w2 {
            for di in 0..2 {
                for dj in 0..2 {
                    let d = ((2 * i + di) * w + 2 * j + dj) * c;
                    let s = (i * w2 + j) * 4 * c + (2 * di + dj) * c;
                    dst[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    out
}

/// Splits channels into `[0, c/2)` (kept) and `[c/2, c)` (emitted).
pub fn split_channels(x: &Tensor) -> (Tensor, Tensor) {
    let (h, w, c) = x.dims3().expect("image tensor");
    let half = c / 2;
    let mut keep = Tensor::zeros(&[h, w, half]);
    let mut emit = Tensor::zeros(&[h, w, c - half]);
    for (p, px) in x.data().chunks_exact(c).enumerate() {
        keep.data_mut()[p * half..(p + 1) * half].copy_from_slice(&px[..half]);
        emit.data_mut()[p * (c - half)..(p + 1) * (c - half)].copy_from_slice(&px[half..]);
    }
    (keep, emit)
}

/// Inverse of [`split_channels`].
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (h, w, ca) = a.dims3().expect("image tensor");
    let (_, _, cb) = b.dims3().expect("image tensor");
    let c = ca + cb;
    let mut out = Tensor::zeros(&[h, w, c]);
    for p in 0..h * w {
        out.data_mut()[p * c..p * c + ca].copy_from_slice(&a.data()[p * ca..(p + 1) * ca]);
        out.data_mut()[p * c + ca..(p + 1) * c].copy_from_slice(&b.data()[p * cb..(p + 1) * cb]);
    }
    out
}

/// Copies channels `range` of a channel-last buffer into a contiguous one.
pub fn gather_channels(x: &[f64], c: usize, range: std::ops::Range<usize>) -> Vec<f64> {
    let k = range.len();
    let mut out = Vec::with_capacity(x.len() / c * k);
    for px in x.chunks_exact(c) {
        out.extend_from_slice(&px[range.clone()]);
    }
    out
}

/// Writes a contiguous `k`-channel buffer into channels `range` of `x`.
pub fn scatter_channels(x: &mut [f64], c: usize, range: std::ops::Range<usize>, src: &[f64]) {
    let k = range.len();
    for (px, s) in x.chunks_exact_mut(c).zip(src.chunks_exact(k)) {
        px[range.clone()].copy_from_slice(s);
    }
}
