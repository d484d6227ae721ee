use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A length-`T` sequence of equal-dimension frames stored contiguously.
///
/// Used both for raw base-feature observations and for embedded latent
/// trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    dim: usize,
    data: Vec<f64>,
}

/// Latent frames produced by an embedding.
pub type EmbeddingSequence = FrameSequence;
/// Base-feature observations.
pub type FeatureSequence = FrameSequence;

impl FrameSequence {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, len: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * len),
        }
    }

    pub fn from_frames<I, F>(dim: usize, frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = F>,
        F: AsRef<[f64]>,
    {
        let mut seq = Self::new(dim);
        for frame in frames {
            seq.push(frame.as_ref())?;
        }
        Ok(seq)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: frame.len(),
            });
        }
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame coordinate"));
        }
        self.data.extend_from_slice(frame);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Reorders frames: output frame `t` is input frame `order[t]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = Self::with_capacity(self.dim, order.len());
        for &t in order {
            out.data.extend_from_slice(self.frame(t));
        }
        out
    }
}
