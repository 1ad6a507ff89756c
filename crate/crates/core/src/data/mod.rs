//! Datasets, normalization, sample masks, and deterministic batching.
//!
//! Labels and sample indices are 0-based throughout.

mod formats;
mod mask;
mod synthetic;

pub use formats::{load_dataset, load_image_dataset, save_dataset, ImageFormat};
pub use mask::Mask;
pub use synthetic::{generate_synthetic, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    File,
    Synthetic,
}

/// An immutable image classification set in pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
    provenance: Provenance,
    outliers: Option<Vec<usize>>,
    origin: Vec<usize>,
}

impl Dataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        classes: usize,
        provenance: Provenance,
        outliers: Option<Vec<usize>>,
    ) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::shape("dataset images", &[labels.len(), 0, 0, 0], s));
        }
        if s[0] == 0 {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if s[0] != labels.len() {
            return Err(Error::shape("dataset labels", &[s[0]], &[labels.len()]));
        }
        crate::loss::check_labels(&labels, classes)?;
        let outliers = outliers.map(|mut o| {
            o.sort_unstable();
            o.dedup();
            o
        });
        if let Some(&bad) = outliers.as_ref().and_then(|o| o.iter().find(|&&i| i >= s[0])) {
            return Err(Error::invalid(format!("outlier index {bad} outside {} samples", s[0])));
        }
        let origin = (0..s[0]).collect();
        Ok(Self {
            images,
            labels,
            classes,
            provenance,
            outliers,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `(channels, height, width)`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Planted outliers (synthetic data only), in this dataset's index space.
    pub fn outliers(&self) -> Option<&[usize]> {
        self.outliers.as_deref()
    }

    /// Maps each local index to the index it had in the dataset it was derived from.
    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (self.images.gather_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Subset in the given order; the index map composes with this dataset's.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let outliers = self.outliers.as_ref().map(|o| {
            idx.iter()
                .enumerate()
                .filter(|(_, i)| o.binary_search(i).is_ok())
                .map(|(k, _)| k)
                .collect()
        });
        Dataset {
            images: self.images.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance,
            outliers,
            origin: idx.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    /// Copy of this dataset with its images replaced (shape preserved).
    pub fn with_images(&self, images: Tensor<f32>) -> Result<Dataset> {
        if images.shape() != self.images.shape() {
            return Err(Error::shape("with_images", self.images.shape(), images.shape()));
        }
        Ok(Dataset {
            images,
            ..self.clone()
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Per-channel standardization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormalizationStats {
    pub fn new(mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        let s = Self { mean, std };
        s.validate(s.mean.len())?;
        Ok(s)
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population mean and std per channel over every sample in `d`.
    /// A constant channel gets std 1 so it maps to zeros.
    pub fn compute(d: &Dataset) -> Self {
        let [c, h, w] = d.image_shape();
        let plane = h * w;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for (k, chunk) in d.images.data().chunks(plane).enumerate() {
            let ch = k % c;
            for &v in chunk {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
        let n = (d.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 0.0 { var.sqrt() as f32 } else { 1.0 }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::shape("normalization stats", &[channels], &[self.mean.len(), self.std.len()]));
        }
        if let Some(s) = self.std.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("normalization std {s} must be positive")));
        }
        Ok(())
    }

    pub(crate) fn as_real<T: Real>(&self) -> (Vec<T>, Vec<T>) {
        (
            self.mean.iter().map(|&v| T::of_f64(v as f64)).collect(),
            self.std.iter().map(|&v| T::of_f64(v as f64)).collect(),
        )
    }
}

/// `out[c] = (in[c] − mean[c]) / std[c]`.
pub fn normalize(d: &Dataset, s: &NormalizationStats) -> Result<Dataset> {
    let [c, h, w] = d.image_shape();
    s.validate(c)?;
    let data = crate::kernels::channel_affine(d.images.data(), c, h * w, &s.mean, &s.std);
    d.with_images(Tensor::new(d.images.shape(), data)?)
}

/// Inverse of [`normalize`].
pub fn denormalize(d: &Dataset, s: &NormalizationStats) -> Result<Dataset> {
    let [c, h, w] = d.image_shape();
    s.validate(c)?;
    let plane = h * w;
    let mut data = Vec::with_capacity(d.images.len());
    for (k, chunk) in d.images.data().chunks(plane).enumerate() {
        let ch = k % c;
        data.extend(chunk.iter().map(|&v| v * s.std[ch] + s.mean[ch]));
    }
    d.with_images(Tensor::new(d.images.shape(), data)?)
}

/// Keeps the samples whose mask bit is set, in original order.
pub fn apply_mask(d: &Dataset, m: &Mask) -> Result<Dataset> {
    if m.len() != d.len() {
        return Err(Error::shape("apply_mask", &[d.len()], &[m.len()]));
    }
    if m.kept() == 0 {
        return Err(Error::invalid("mask removes every sample"));
    }
    Ok(d.select(&m.retained()))
}

/// Shuffled minibatches of `0..n`. The permutation depends only on
/// `(seed, epoch)`; the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batches(d: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    batch_indices(d.len(), batch_size, seed, epoch)
}

/// Batches in natural order, for evaluation.
pub fn sequential_batches(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(batch_size.max(1)).map(|s| s..(s + batch_size).min(n)).collect()
}
