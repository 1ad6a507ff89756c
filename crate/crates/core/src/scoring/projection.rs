use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMethod {
    /// Mean over `P` contiguous runs of the row-major spatial positions.
    #[default]
    AveragePool,
    /// Fixed Gaussian `(h·w) × P` matrix with entries `N(0, 1/P)`.
    RandomProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub dim: usize,
    pub method: ProjectionMethod,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            method: ProjectionMethod::AveragePool,
            seed: 0,
        }
    }
}

/// A concrete spatial projection for one feature-map size. The same operator
/// is applied to clean and perturbed features.
#[derive(Debug, Clone)]
pub struct Projection {
    spatial: usize,
    dim: usize,
    kind: Operator,
}

#[derive(Debug, Clone)]
enum Operator {
    Bins(Vec<usize>),
    Matrix(Vec<f32>),
}

impl Projection {
    /// Builds the operator for `h·w = spatial` positions; `salt` separates the
    /// random matrices of different layers.
    pub fn new(cfg: &ProjectionConfig, spatial: usize, salt: u64) -> Result<Self> {
        if cfg.dim == 0 || cfg.dim >= spatial {
            return Err(Error::invalid(format!(
                "projection dim {} must satisfy 0 < P < h·w = {spatial}",
                cfg.dim
            )));
        }
        let kind = match cfg.method {
            ProjectionMethod::AveragePool => {
                Operator::Bins((0..=cfg.dim).map(|j| j * spatial / cfg.dim).collect())
            }
            ProjectionMethod::RandomProjection => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(salt);
                let dist = Normal::new(0.0, (1.0 / cfg.dim as f64).sqrt()).expect("finite std");
                Operator::Matrix((0..spatial * cfg.dim).map(|_| dist.sample(&mut rng) as f32).collect())
            }
        };
        Ok(Self {
            spatial,
            dim: cfg.dim,
            kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Projects one spatial map into `out` (length `P`).
    fn apply_plane(&self, plane: &[f32], out: &mut [f32]) {
        match &self.kind {
            Operator::Bins(edges) => {
                for (j, o) in out.iter_mut().enumerate() {
                    let run = &plane[edges[j]..edges[j + 1]];
                    *o = run.iter().sum::<f32>() / run.len() as f32;
                }
            }
            Operator::Matrix(m) => {
                out.fill(0.0);
                for (s, &v) in plane.iter().enumerate() {
                    let row = &m[s * self.dim..][..self.dim];
                    for (o, &r) in out.iter_mut().zip(row) {
                        *o += v * r;
                    }
                }
            }
        }
    }

    /// `(batch, k, h, w)` features of the kept channels → `(batch, k, P)`.
    pub fn apply(&self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = features.shape();
        if s.len() != 4 || s[2] * s[3] != self.spatial {
            return Err(Error::shape("projection input", &[0, 0, self.spatial], s));
        }
        let mut out = vec![0f32; s[0] * s[1] * self.dim];
        for (plane, o) in features.data().chunks(self.spatial).zip(out.chunks_mut(self.dim)) {
            self.apply_plane(plane, o);
        }
        Tensor::new(&[s[0], s[1], self.dim], out)
    }
}

/// Keeps channels `idx` of a `(batch, O, h, w)` map.
pub fn select_channels(features: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>> {
    let s = features.shape();
    if s.len() != 4 {
        return Err(Error::shape("select_channels", &[0, 0, 0, 0], s));
    }
    if let Some(&bad) = idx.iter().find(|&&c| c >= s[1]) {
        return Err(Error::invalid(format!("channel {bad} outside {} channels", s[1])));
    }
    let plane = s[2] * s[3];
    let mut out = Vec::with_capacity(s[0] * idx.len() * plane);
    for b in 0..s[0] {
        for &c in idx {
            out.extend_from_slice(&features.data()[(b * s[1] + c) * plane..][..plane]);
        }
    }
    Tensor::new(&[s[0], idx.len(), s[2], s[3]], out)
}

/// One-shot projection of `(batch, k, h, w)` features.
pub fn project(features: &Tensor<f32>, cfg: &ProjectionConfig) -> Result<Tensor<f32>> {
    let s = features.shape();
    if s.len() != 4 {
        return Err(Error::shape("project", &[0, 0, 0, 0], s));
    }
    Projection::new(cfg, s[2] * s[3], 0)?.apply(features)
}
