use super::diffop::DiffOp;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Geometry of a same-padded 2-D convolution over a channel-last image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd kernel extent.
    pub kernel: usize,
}

impl ConvShape {
    pub fn kernel_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
    }
}

// Yields (output pixel, kernel tap, input pixel) triples inside the image.
#[inline]
fn for_each_tap(s: &ConvShape, mut f: impl FnMut(usize, usize, usize)) {
    let r = (s.kernel / 2) as isize;
    let (h, w) = (s.height as isize, s.width as isize);
    for i in 0..h {
        for j in 0..w {
            let out = (i * w + j) as usize;
            for di in -r..=r {
                let ii = i + di;
                if ii < 0 || ii >= h {
                    continue;
                }
                for dj in -r..=r {
                    let jj = j + dj;
                    if jj < 0 || jj >= w {
                        continue;
                    }
                    let tap = ((di + r) * s.kernel as isize + (dj + r)) as usize;
                    f(out, tap, (ii * w + jj) as usize);
                }
            }
        }
    }
}

/// `out = conv(x, kernel) + bias`, kernel laid out `(ky, kx, cin, cout)`.
pub fn conv2d_raw(x: &[f64], s: &ConvShape, kernel: &[f64], bias: &[f64], out: &mut [f64]) {
    let (ci, co) = (s.in_channels, s.out_channels);
    debug_assert_eq!(x.len(), s.height * s.width * ci);
    debug_assert_eq!(out.len(), s.height * s.width * co);
    for px in out.chunks_exact_mut(co) {
        px.copy_from_slice(bias);
    }
    for_each_tap(s, |o, tap, p| {
        let acc = &mut out[o * co..(o + 1) * co];
        let xin = &x[p * ci..(p + 1) * ci];
        let k = &kernel[tap * ci * co..(tap + 1) * ci * co];
        for (a, &xv) in xin.iter().enumerate() {
            let row = &k[a * co..(a + 1) * co];
            for (y, &kv) in acc.iter_mut().zip(row) {
                *y += xv * kv;
            }
        }
    });
}

/// Input cotangent of [`conv2d_raw`]; overwrites `grad_x`.
pub fn conv2d_backward_input(grad_out: &[f64], s: &ConvShape, kernel: &[f64], grad_x: &mut [f64]) {
    let (ci, co) = (s.in_channels, s.out_channels);
    grad_x.iter_mut().for_each(|v| *v = 0.0);
    for_each_tap(s, |o, tap, p| {
        let gy = &grad_out[o * co..(o + 1) * co];
        let gx = &mut grad_x[p * ci..(p + 1) * ci];
        let k = &kernel[tap * ci * co..(tap + 1) * ci * co];
        for (a, g) in gx.iter_mut().enumerate() {
            let row = &k[a * co..(a + 1) * co];
            *g += row.iter().zip(gy).map(|(kv, gv)| kv * gv).sum::<f64>();
        }
    });
}

/// Kernel and bias cotangents of [`conv2d_raw`]; accumulates into the outputs.
pub fn conv2d_backward_params(
    x: &[f64],
    grad_out: &[f64],
    s: &ConvShape,
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) {
    let (ci, co) = (s.in_channels, s.out_channels);
    for gy in grad_out.chunks_exact(co) {
        for (b, g) in grad_bias.iter_mut().zip(gy) {
            *b += g;
        }
    }
    for_each_tap(s, |o, tap, p| {
        let gy = &grad_out[o * co..(o + 1) * co];
        let xin = &x[p * ci..(p + 1) * ci];
        let gk = &mut grad_kernel[tap * ci * co..(tap + 1) * ci * co];
        for (a, &xv) in xin.iter().enumerate() {
            let row = &mut gk[a * co..(a + 1) * co];
            for (k, &gv) in row.iter_mut().zip(gy) {
                *k += xv * gv;
            }
        }
    });
}

fn conv_shape(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<ConvShape> {
    let (h, w, c) = x.dims3()?;
    let (k, ci, co) = match kernel.shape() {
        &[ky, kx, ci, co] if ky == kx => (ky, ci, co),
        s => return Err(Error::Dimension(format!("kernel must be (k, k, cin, cout), got {s:?}"))),
    };
    if k % 2 == 0 {
        return Err(Error::Dimension(format!("kernel extent must be odd, got {k}")));
    }
    if ci != c {
        return Err(Error::Dimension(format!("input has {c} channels, kernel expects {ci}")));
    }
    if bias.len() != co {
        return Err(Error::Dimension(format!("bias has {} entries, kernel outputs {co}", bias.len())));
    }
    Ok(ConvShape { height: h, width: w, in_channels: ci, out_channels: co, kernel: k })
}

/// Same-padded (zero boundary) 2-D convolution.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let s = conv_shape(x, kernel, bias)?;
    let mut out = Tensor::zeros(&[s.height, s.width, s.out_channels]);
    conv2d_raw(x.data(), &s, kernel.data(), bias.data(), out.data_mut());
    Ok(out)
}

/// Convolution with fixed weights as a [`DiffOp`] in its input.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    /// Kernel and bias cotangents for input `x` and output cotangent `u`.
    pub fn param_vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = conv_shape(x, &self.kernel, &self.bias)?;
        let mut gk = Tensor::zeros(self.kernel.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        conv2d_backward_params(x.data(), cotangent.data(), &s, gk.data_mut(), gb.data_mut());
        Ok((gk, gb))
    }
}

impl DiffOp for Conv2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.kernel, &self.bias)
    }

    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        let s = conv_shape(x, &self.kernel, &self.bias)?;
        let mut gx = Tensor::zeros(x.shape());
        conv2d_backward_input(cotangent.data(), &s, self.kernel.data(), gx.data_mut());
        Ok(gx)
    }
}
