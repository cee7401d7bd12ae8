use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Intensity window used to quantize an image to 16 bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmRange {
    pub lo: f64,
    pub hi: f64,
}

/// Binary 16-bit PGM of a single-channel image; the window is the image's
/// own min/max. A constant image maps to all zeros.
pub fn encode_pgm(image: &Tensor) -> Result<(Vec<u8>, PgmRange)> {
    let (h, w, c) = image.dims3()?;
    if c != 1 {
        return Err(Error::Dimension(format!("PGM needs a single channel, got {c}")));
    }
    let range = PgmRange { lo: image.min(), hi: image.max() };
    let mut out = format!("P5 {w} {h} 65535\n").into_bytes();
    let span = range.hi - range.lo;
    for &v in image.data() {
        let q = if span > 0.0 { (65535.0 * (v - range.lo) / span).round().clamp(0.0, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok((out, range))
}

/// Writes `path` plus a `path.range` sidecar holding the window.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<PgmRange> {
    let (bytes, range) = encode_pgm(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".range");
    let side = std::path::PathBuf::from(side);
    let text = format!("lo = {}\nhi = {}\n", super::format_float(range.lo), super::format_float(range.hi));
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(range)
}

/// Plain-bit binary PBM (`P4`); `true` is a set (black) pixel.
pub fn encode_pbm(bits: &[bool], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P4 {width} {height}\n").into_bytes();
    for row in bits.chunks_exact(width) {
        for byte in row.chunks(8) {
            let mut b = 0u8;
            for (k, &bit) in byte.iter().enumerate() {
                if bit {
                    b |= 0x80 >> k;
                }
            }
            out.push(b);
        }
    }
    out
}

pub fn write_pbm(path: &Path, bits: &[bool], height: usize, width: usize) -> Result<()> {
    std::fs::write(path, encode_pbm(bits, height, width)).map_err(|e| Error::io(path, e))
}
