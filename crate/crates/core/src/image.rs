use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit raster, row-major and channel-last.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGeometry(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width}x{channels} image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// An image with every byte set to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, alloc::vec![value; height * width * channels])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let o = self.offset(row, col);
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [u8] {
        let o = self.offset(row, col);
        let ch = self.channels;
        &mut self.data[o..o + ch]
    }

    /// Mean of every byte, per channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = alloc::vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += f64::from(v);
            }
        }
        let n = (self.height * self.width) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

/// A classifier posterior: non-negative probabilities over at least two
/// classes that sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prediction(Vec<f64>);

impl Prediction {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::validate(&probs, Self::SUM_TOLERANCE)?;
        Ok(Self(probs))
    }

    /// Accepts rows whose sum is within `tolerance` of one, then rescales
    /// them to sum to one.
    pub fn normalized(mut probs: Vec<f64>, tolerance: f64) -> Result<Self> {
        Self::validate(&probs, tolerance)?;
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        Ok(Self(probs))
    }

    fn validate(probs: &[f64], tolerance: f64) -> Result<()> {
        if probs.len() < 2 {
            return Err(Error::InvalidPrediction(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidPrediction(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::InvalidPrediction(format!(
                "probabilities sum to {sum}, not 1 within {tolerance:e}"
            )));
        }
        Ok(())
    }

    /// Wraps a convex combination of valid predictions.
    pub(crate) fn from_convex(probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() >= 2);
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, class: usize) -> Option<f64> {
        self.0.get(class).copied()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Class indices of the `k` largest probabilities, ties to the lower index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }

    pub fn argmax(&self) -> usize {
        self.top_k(1)[0]
    }

    /// Entrywise running mean. Identical inputs give back exactly that input.
    pub fn mean(predictions: &[Prediction]) -> Result<Prediction> {
        let first = predictions
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero predictions".into()))?;
        let mut acc = first.0.clone();
        for (k, p) in predictions.iter().enumerate().skip(1) {
            if p.0.len() != acc.len() {
                return Err(Error::InvalidPrediction(format!(
                    "class count mismatch: {} vs {}",
                    p.0.len(),
                    acc.len()
                )));
            }
            let n = (k + 1) as f64;
            for (m, &v) in acc.iter_mut().zip(&p.0) {
                *m += (v - *m) / n;
            }
        }
        Ok(Prediction::from_convex(acc))
    }
}
