use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::io::{encode_pbm, write_pbm};

/// Calibration radius as a fraction of the k-space extent.
pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.08;

const RATIO_TOLERANCE: f64 = 0.1;
const BISECTION_STEPS: usize = 60;

/// Binary k-space sampling pattern in unshifted FFT layout (DC at `[0, 0]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    nominal_ratio: f64,
    descriptor: String,
}

impl SamplingMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>, nominal_ratio: f64, descriptor: String) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Dimension(format!("mask has {} entries, expected {height}x{width}", bits.len())));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::Generation("mask samples no k-space location".into()));
        }
        Ok(SamplingMask { height, width, bits, nominal_ratio, descriptor })
    }

    /// Fully sampled mask (`R = 1`).
    pub fn full(height: usize, width: usize) -> Self {
        SamplingMask {
            height,
            width,
            bits: vec![true; height * width],
            nominal_ratio: 1.0,
            descriptor: "full".into(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn sampled_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn nominal_ratio(&self) -> f64 {
        self.nominal_ratio
    }

    /// `n / m`: grid size over number of samples.
    pub fn achieved_ratio(&self) -> f64 {
        self.bits.len() as f64 / self.sampled_count() as f64
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// Mask as 0/1 values, row-major.
    pub fn to_values(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Bits with the zero frequency moved to the centre, for viewing.
    pub fn centered_bits(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let mut out = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                out[((r + h / 2) % h) * w + (c + w / 2) % w] = self.bits[r * w + c];
            }
        }
        out
    }

    pub fn to_pbm(&self) -> Vec<u8> {
        encode_pbm(&self.centered_bits(), self.height, self.width)
    }

    pub fn write_pbm(&self, path: &Path) -> Result<()> {
        write_pbm(path, &self.centered_bits(), self.height, self.width)
    }

    fn check_ratio(&self) -> Result<()> {
        let achieved = self.achieved_ratio();
        if (achieved - self.nominal_ratio).abs() > RATIO_TOLERANCE * self.nominal_ratio {
            return Err(Error::Generation(format!(
                "achieved ratio {achieved:.3} is not within 10% of nominal {}",
                self.nominal_ratio
            )));
        }
        Ok(())
    }
}

fn check_request(height: usize, width: usize, ratio: f64) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension("mask extent must be positive".into()));
    }
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::Config(format!("undersampling ratio must be finite and >= 1, got {ratio}")));
    }
    Ok(())
}

/// Signed frequency index of FFT bin `i` out of `n`.
fn freq(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Variable-density Poisson-disc pattern: a fully sampled disc of
/// `calibration_radius` (in k-space samples) around DC, then dart throwing
/// in random order where a candidate at distance `d` from DC is rejected if
/// an accepted sample lies closer than `slope * d`. The slope is bisected
/// until the achieved ratio is within 10% of `ratio`.
pub fn poisson_disc_mask(
    height: usize,
    width: usize,
    ratio: f64,
    calibration_radius: f64,
    rng: &mut impl Rng,
) -> Result<SamplingMask> {
    check_request(height, width, ratio)?;
    if ratio == 1.0 {
        return Ok(SamplingMask::full(height, width));
    }
    let n = height * width;
    let dist: Vec<f64> = (0..n)
        .map(|i| freq(i / width, height).hypot(freq(i % width, width)))
        .collect();
    let calib: Vec<usize> = (0..n).filter(|&i| dist[i] <= calibration_radius).collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| dist[i] > calibration_radius).collect();
    order.shuffle(rng);

    let throw = |slope: f64| -> Vec<bool> {
        let mut bits = vec![false; n];
        for &i in &calib {
            bits[i] = true;
        }
        for &i in &order {
            let r = slope * dist[i];
            let reach = r.ceil() as isize;
            let (y, x) = (freq(i / width, height), freq(i % width, width));
            let mut free = true;
            'scan: for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if (dy == 0 && dx == 0) || ((dy * dy + dx * dx) as f64) >= r * r {
                        continue;
                    }
                    let (yy, xx) = (y + dy as f64, x + dx as f64);
                    // No wrap-around: k-space is bounded.
                    if yy < freq(height.div_ceil(2), height) || yy >= height.div_ceil(2) as f64 {
                        continue;
                    }
                    if xx < freq(width.div_ceil(2), width) || xx >= width.div_ceil(2) as f64 {
                        continue;
                    }
                    let row = (yy as isize).rem_euclid(height as isize) as usize;
                    let col = (xx as isize).rem_euclid(width as isize) as usize;
                    if bits[row * width + col] {
                        free = false;
                        break 'scan;
                    }
                }
            }
            if free {
                bits[i] = true;
            }
        }
        bits
    };
    let achieved = |bits: &[bool]| n as f64 / bits.iter().filter(|&&b| b).count() as f64;
    let within = |a: f64| (a - ratio).abs() <= RATIO_TOLERANCE * ratio;

    let mut lo = 0.0;
    let mut hi = 0.25;
    loop {
        let bits = throw(hi);
        let a = achieved(&bits);
        if within(a) {
            return finish(height, width, bits, ratio, calibration_radius, hi);
        }
        if a > ratio {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Generation(format!(
                "ratio {ratio} unreachable: calibration region alone gives {:.3}",
                n as f64 / calib.len().max(1) as f64
            )));
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let bits = throw(mid);
        let a = achieved(&bits);
        if within(a) {
            return finish(height, width, bits, ratio, calibration_radius, mid);
        }
        if a > ratio {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Generation(format!("bisection failed to reach ratio {ratio}")))
}

fn finish(height: usize, width: usize, bits: Vec<bool>, ratio: f64, calib: f64, slope: f64) -> Result<SamplingMask> {
    let mask = SamplingMask::new(
        height,
        width,
        bits,
        ratio,
        format!("poisson_disc(ratio={ratio}, calibration_radius={calib}, slope={slope:.6})"),
    )?;
    mask.check_ratio()?;
    Ok(mask)
}

/// Random Cartesian pattern of fully sampled columns: `center_lines`
/// columns around DC plus uniformly drawn columns up to `round(width / ratio)`.
pub fn cartesian_mask(
    height: usize,
    width: usize,
    ratio: f64,
    center_lines: usize,
    rng: &mut impl Rng,
) -> Result<SamplingMask> {
    check_request(height, width, ratio)?;
    let total = ((width as f64 / ratio).round() as usize).max(1);
    if center_lines > total {
        return Err(Error::Generation(format!(
            "{center_lines} centre lines exceed the {total} columns allowed by ratio {ratio}"
        )));
    }
    let half = center_lines as isize / 2;
    let mut keep = vec![false; width];
    for k in -half..center_lines as isize - half {
        keep[k.rem_euclid(width as isize) as usize] = true;
    }
    let mut rest: Vec<usize> = (0..width).filter(|&c| !keep[c]).collect();
    rest.shuffle(rng);
    for &c in rest.iter().take(total - center_lines) {
        keep[c] = true;
    }
    let bits = (0..height * width).map(|i| keep[i % width]).collect();
    let mask = SamplingMask::new(
        height,
        width,
        bits,
        ratio,
        format!("cartesian(ratio={ratio}, center_lines={center_lines})"),
    )?;
    mask.check_ratio()?;
    Ok(mask)
}
