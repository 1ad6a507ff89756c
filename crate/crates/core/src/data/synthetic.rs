use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Recipe for a class-conditional image set with planted noisy outliers.
///
/// Every class has a smooth template (a product of low-frequency sinusoids per
/// channel). Clean samples add `N(0, jitter²)` pixel noise, the `outliers`
/// planted samples add `N(0, outlier_sigma²)`; pixels are clipped to `[0, 1]`.
/// Templates depend only on `seed`; `stream` selects an independent draw of
/// samples, so a test split shares templates with its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub outliers: usize,
    pub outlier_sigma: f64,
    pub jitter: f64,
    /// Template amplitude around mid-grey.
    pub contrast: f64,
    pub seed: u64,
    pub stream: u64,
}

impl SyntheticSpec {
    /// A 3×8×8 set with 10% outliers, handy for tests.
    pub fn small(n: usize, classes: usize, seed: u64) -> Self {
        Self {
            n,
            classes,
            channels: 3,
            height: 8,
            width: 8,
            outliers: n / 10,
            outlier_sigma: 0.5,
            jitter: 0.05,
            contrast: 0.25,
            seed,
            stream: 0,
        }
    }

    /// Same templates, different samples, no outliers.
    pub fn test_split(&self, n: usize) -> Self {
        Self {
            n,
            outliers: 0,
            stream: self.stream + 1,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.classes == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("synthetic extents must be positive"));
        }
        if self.outliers >= self.n {
            return Err(Error::invalid(format!(
                "outlier count {} must be below n = {}",
                self.outliers, self.n
            )));
        }
        if !(self.outlier_sigma >= 0.0 && self.jitter >= 0.0 && self.contrast >= 0.0) {
            return Err(Error::invalid("noise levels and contrast must be non-negative"));
        }
        Ok(())
    }

    /// Per-class templates, `classes × (channels·height·width)`.
    pub fn templates(&self) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let freq = Uniform::new_inclusive(1u32, 2).expect("valid range");
        let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
        let (h, w) = (self.height as f64, self.width as f64);
        (0..self.classes)
            .map(|_| {
                let mut t = Vec::with_capacity(self.channels * self.height * self.width);
                for _ in 0..self.channels {
                    let fx = freq.sample(&mut rng) as f64;
                    let fy = freq.sample(&mut rng) as f64;
                    let (px, py) = (phase.sample(&mut rng), phase.sample(&mut rng));
                    for y in 0..self.height {
                        for x in 0..self.width {
                            let sx = (std::f64::consts::TAU * fx * x as f64 / w + px).sin();
                            let sy = (std::f64::consts::TAU * fy * y as f64 / h + py).cos();
                            t.push((0.5 + self.contrast * sx * sy) as f32);
                        }
                    }
                }
                t
            })
            .collect()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let templates = spec.templates();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1 + spec.stream);

    let mut outliers = rand::seq::index::sample(&mut rng, spec.n, spec.outliers).into_vec();
    outliers.sort_unstable();

    let clean = Normal::new(0.0, spec.jitter).expect("finite jitter");
    let noisy = Normal::new(0.0, spec.outlier_sigma).expect("finite sigma");
    let row = spec.channels * spec.height * spec.width;
    let mut pixels = Vec::with_capacity(spec.n * row);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = i % spec.classes;
        let dist = if outliers.binary_search(&i).is_ok() { &noisy } else { &clean };
        pixels.extend(
            templates[label]
                .iter()
                .map(|&t| (t as f64 + dist.sample(&mut rng)).clamp(0.0, 1.0) as f32),
        );
        labels.push(label);
    }
    let images = Tensor::new(&[spec.n, spec.channels, spec.height, spec.width], pixels)?;
    Dataset::new(images, labels, spec.classes, Provenance::Synthetic, Some(outliers))
}
