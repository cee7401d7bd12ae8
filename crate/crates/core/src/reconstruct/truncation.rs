use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{rmse, ssim};
use crate::flow::MultiscaleFlow;
use crate::io::{format_float, Table};
use crate::numerics::Tensor;
use crate::sparsity::{haar_forward, haar_inverse, haar_truncate};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub transform: String,
    /// Number of finest sections zeroed.
    pub level: usize,
    pub kept_fraction: f64,
    pub mean_rmse: f64,
    pub mean_ssim: f64,
}

impl TruncationRow {
    pub const HEADER: [&'static str; 5] = ["transform", "level", "kept_fraction", "mean_rmse", "mean_ssim"];

    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.transform.clone(),
            self.level.to_string(),
            format_float(self.kept_fraction),
            format_float(self.mean_rmse),
            format_float(self.mean_ssim),
        ]
    }

    pub fn table(rows: &[TruncationRow]) -> Table {
        let mut t = Table::new(&Self::HEADER);
        for r in rows {
            t.push(r.to_record());
        }
        t
    }
}

/// Kept fraction after zeroing the `i` finest sections, for each `i`.
pub fn valid_fractions(section_lens: &[usize]) -> Vec<f64> {
    let n: usize = section_lens.iter().sum();
    (0..section_lens.len())
        .map(|i| section_lens[i..].iter().sum::<usize>() as f64 / n as f64)
        .collect()
}

fn mean_scores(scores: Vec<Result<(f64, f64)>>) -> Result<(f64, f64)> {
    let count = scores.len() as f64;
    let (mut r, mut s) = (0.0, 0.0);
    for v in scores {
        let (a, b) = v?;
        r += a;
        s += b;
    }
    Ok((r / count, s / count))
}

/// Inverts each image, zeroes latent sections finest-first until only
/// `fraction` of the coordinates remain, regenerates and scores against
/// the original. Fractions must fall on section boundaries.
pub fn truncation_study(flow: &MultiscaleFlow, images: &[Tensor], fractions: &[f64]) -> Result<Vec<TruncationRow>> {
    if images.is_empty() {
        return Err(Error::Config("truncation study needs at least one image".into()));
    }
    let valid = valid_fractions(&flow.section_lens());
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let level = valid.iter().position(|&v| (v - fraction).abs() < 1e-9).ok_or_else(|| {
            Error::Config(format!(
                "kept fraction {fraction} is not on a section boundary; valid fractions are {valid:?}"
            ))
        })?;
        let scores: Vec<Result<(f64, f64)>> = images
            .par_iter()
            .map(|f| {
                let (mut z, _) = flow.inverse(f)?;
                z.zero_leading_sections(level);
                let (fp, _) = flow.forward(&z)?;
                let fp = fp.reshape(f.shape())?;
                Ok((rmse(&fp, f)?, ssim(&fp, f)?))
            })
            .collect();
        let (mean_rmse, mean_ssim) = mean_scores(scores)?;
        rows.push(TruncationRow { transform: "inn".into(), level, kept_fraction: fraction, mean_rmse, mean_ssim });
    }
    Ok(rows)
}

/// The same study for an `levels`-level Haar pyramid, one row per
/// truncation level `0..levels`.
pub fn haar_truncation_study(images: &[Tensor], levels: usize) -> Result<Vec<TruncationRow>> {
    if images.is_empty() {
        return Err(Error::Config("truncation study needs at least one image".into()));
    }
    let pyramids: Vec<_> = images.iter().map(|f| haar_forward(f, levels)).collect::<Result<_>>()?;
    let valid = valid_fractions(&pyramids[0].section_lens());
    let mut rows = Vec::with_capacity(levels);
    for (level, &kept_fraction) in valid.iter().enumerate() {
        let scores: Vec<Result<(f64, f64)>> = pyramids
            .par_iter()
            .zip(images)
            .map(|(p, f)| {
                let fp = haar_inverse(&haar_truncate(p, level)?)?.reshape(f.shape())?;
                Ok((rmse(&fp, f)?, ssim(&fp, f)?))
            })
            .collect();
        let (mean_rmse, mean_ssim) = mean_scores(scores)?;
        rows.push(TruncationRow { transform: "haar".into(), level, kept_fraction, mean_rmse, mean_ssim });
    }
    Ok(rows)
}
