use xlm_tensor::{Float, Tensor};

use crate::error::{contract, CoreError, Result};

/// Labelled images held in memory as one contiguous (N,C,H,W) buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    chw: [usize; 3],
    pixels: Vec<T>,
    labels: Vec<usize>,
}

impl<T: Float> Dataset<T> {
    pub fn new(chw: [usize; 3], pixels: Vec<T>, labels: Vec<usize>) -> Result<Self> {
        let per = chw.iter().product::<usize>();
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(CoreError::Dimension(format!(
                "{} values for {} images of {chw:?}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Self { chw, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn chw(&self) -> [usize; 3] {
        self.chw
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[T] {
        let per = self.chw.iter().product::<usize>();
        &self.pixels[i * per..(i + 1) * per]
    }

    /// Gathers the listed images into a (B,C,H,W) tensor with their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        if indices.is_empty() {
            return contract("empty batch");
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return contract(format!("index {i} outside dataset of {}", self.len()));
        }
        let per = self.chw.iter().product::<usize>();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.chw;
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let (x, labels) = self.batch(indices)?;
        Self::new(self.chw, x.into_data(), labels)
    }

    /// Contiguous index ranges of at most `size` covering the dataset.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |s| (s..(s + size).min(self.len())).collect())
    }
}
