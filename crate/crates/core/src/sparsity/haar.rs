use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Multilevel orthonormal Haar coefficients of an `[h, w, c]` image.
///
/// Section `k < L-1` holds the three detail bands of decomposition level
/// `k+1` (finest first); the last section holds the coarsest detail bands
/// followed by the final approximation, so there are exactly `L` sections
/// as in the flow's latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarPyramid {
    shape: [usize; 3],
    sections: Vec<Vec<f64>>,
}

impl HaarPyramid {
    pub fn levels(&self) -> usize {
        self.sections.len()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn section(&self, index: usize) -> &[f64] {
        &self.sections[index]
    }

    pub fn section_lens(&self) -> Vec<usize> {
        self.sections.iter().map(Vec::len).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.sections.concat()
    }

    pub fn len(&self) -> usize {
        self.sections.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.sections.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One analysis step on a `[h, w]` plane: returns (approximation, details).
/// Details are laid out as horizontal, vertical, diagonal bands.
fn analyse(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (h2, w2) = (h / 2, w / 2);
    let mut approx = vec![0.0; h2 * w2];
    let mut det = vec![0.0; 3 * h2 * w2];
    for i in 0..h2 {
        for j in 0..w2 {
            let a = x[2 * i * w + 2 * j];
            let b = x[2 * i * w + 2 * j + 1];
            let c = x[(2 * i + 1) * w + 2 * j];
            let d = x[(2 * i + 1) * w + 2 * j + 1];
            let k = i * w2 + j;
            approx[k] = 0.5 * (a + b + c + d);
            det[k] = 0.5 * (a - b + c - d);
            det[h2 * w2 + k] = 0.5 * (a + b - c - d);
            det[2 * h2 * w2 + k] = 0.5 * (a - b - c + d);
        }
    }
    (approx, det)
}

fn synthesise(approx: &[f64], det: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut x = vec![0.0; h * w];
    for i in 0..h2 {
        for j in 0..w2 {
            let k = i * w2 + j;
            let (s, p, q, r) = (approx[k], det[k], det[h2 * w2 + k], det[2 * h2 * w2 + k]);
            x[2 * i * w + 2 * j] = 0.5 * (s + p + q + r);
            x[2 * i * w + 2 * j + 1] = 0.5 * (s - p + q - r);
            x[(2 * i + 1) * w + 2 * j] = 0.5 * (s + p - q - r);
            x[(2 * i + 1) * w + 2 * j + 1] = 0.5 * (s - p - q + r);
        }
    }
    x
}

/// `levels`-level orthonormal Haar analysis, channel by channel.
pub fn haar_forward(f: &Tensor, levels: usize) -> Result<HaarPyramid> {
    let (h, w, c) = f.dims3()?;
    if levels == 0 {
        return Err(Error::Config("Haar transform needs at least one level".into()));
    }
    let block = 1usize << levels;
    if h % block != 0 || w % block != 0 {
        return Err(Error::Dimension(format!("{h}x{w} image is not divisible by 2^{levels}")));
    }
    let mut sections = vec![Vec::new(); levels];
    for ch in 0..c {
        let mut plane: Vec<f64> = (0..h * w).map(|i| f.data()[i * c + ch]).collect();
        let (mut ph, mut pw) = (h, w);
        for (level, section) in sections.iter_mut().enumerate() {
            let (approx, det) = analyse(&plane, ph, pw);
            section.extend_from_slice(&det);
            ph /= 2;
            pw /= 2;
            plane = approx;
            if level + 1 == levels {
                section.extend_from_slice(&plane);
            }
        }
    }
    Ok(HaarPyramid { shape: [h, w, c], sections })
}

pub fn haar_inverse(p: &HaarPyramid) -> Result<Tensor> {
    let [h, w, c] = p.shape;
    let levels = p.levels();
    let mut out = Tensor::zeros(&[h, w, c]);
    for ch in 0..c {
        let (ch_h, ch_w) = (h >> levels, w >> levels);
        // Per-channel extents inside each section.
        let last_det = 3 * ch_h * ch_w;
        let last = &p.sections[levels - 1];
        let last_len = last_det + ch_h * ch_w;
        let chunk = &last[ch * last_len..(ch + 1) * last_len];
        let mut plane = synthesise(&chunk[last_det..], &chunk[..last_det], 2 * ch_h, 2 * ch_w);
        for level in (0..levels - 1).rev() {
            let (lh, lw) = (h >> level, w >> level);
            let n = 3 * (lh / 2) * (lw / 2);
            let det = &p.sections[level][ch * n..(ch + 1) * n];
            plane = synthesise(&plane, det, lh, lw);
        }
        for (i, v) in plane.into_iter().enumerate() {
            out.data_mut()[i * c + ch] = v;
        }
    }
    Ok(out)
}

/// Zeroes the `i` finest sections.
pub fn haar_truncate(p: &HaarPyramid, i: usize) -> Result<HaarPyramid> {
    if i >= p.levels() {
        return Err(Error::Config(format!("truncation level {i} must be below {}", p.levels())));
    }
    let mut out = p.clone();
    for s in &mut out.sections[..i] {
        s.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(out)
}
