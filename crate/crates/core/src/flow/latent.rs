use crate::error::{Error, Result};

/// Latent vector made of per-level sections `z(1), ..., z(L)`.
///
/// The flat order concatenates the sections finest-first, so zeroing a
/// prefix of the flat vector removes the finest scales first.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    data: Vec<f64>,
    sections: Vec<usize>,
}

impl LatentVector {
    pub fn new(data: Vec<f64>, sections: Vec<usize>) -> Result<Self> {
        let total: usize = sections.iter().sum();
        if total != data.len() {
            return Err(Error::Dimension(format!(
                "latent has {} values but sections sum to {total}",
                data.len()
            )));
        }
        Ok(LatentVector { data, sections })
    }

    pub fn zeros(sections: &[usize]) -> Self {
        LatentVector { data: vec![0.0; sections.iter().sum()], sections: sections.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn section_lens(&self) -> &[usize] {
        &self.sections
    }

    pub fn section_count(&self) -> usize {
        self.sections.len()
    }

    fn section_range(&self, index: usize) -> std::ops::Range<usize> {
        let start: usize = self.sections[..index].iter().sum();
        start..start + self.sections[index]
    }

    /// Section `index` (0-based, finest first).
    pub fn section(&self, index: usize) -> &[f64] {
        &self.data[self.section_range(index)]
    }

    pub fn section_mut(&mut self, index: usize) -> &mut [f64] {
        let r = self.section_range(index);
        &mut self.data[r]
    }

    /// Same section layout with new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        LatentVector::new(data, self.sections.clone())
    }

    /// Zeroes sections `0..count`.
    pub fn zero_leading_sections(&mut self, count: usize) {
        let end: usize = self.sections[..count.min(self.sections.len())].iter().sum();
        self.data[..end].iter_mut().for_each(|v| *v = 0.0);
    }
}
