//! Noise-sensitivity scoring: how far each sample's features move when the
//! normalized input is perturbed, and the removal mask derived from it.
//!
//! Pipeline per tapped layer `l`: perturb → forward clean and noisy → keep the
//! selected filters → project → per-channel distance → min-max normalize over
//! all samples → mean over channels (`ξ⁽ˡ⁾`). The layers are then combined with
//! a [`WindowFunction`] and the top-`γ` samples are masked.

mod distance;
mod mask;
mod noise;
mod projection;
mod sensitivity;
mod window;

pub use distance::{feature_distance, layer_instability, normalize_distances, Matrix};
pub use mask::{compute_mask, top_gamma};
pub use noise::{perturb, NoiseConfig, NoiseSource, ZeroNoise};
pub use projection::{project, select_channels, Projection, ProjectionConfig, ProjectionMethod};
pub use sensitivity::{select_sensitive_filters, top_k_filters, ImportanceMetric, SensitivitySelection};
pub use window::{aggregate, WindowFunction};

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::digest_hex;
use crate::data::{sequential_batches, Dataset, Mask};
use crate::error::{Error, Result};
use crate::nn::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub noise: NoiseConfig,
    pub projection: ProjectionConfig,
    /// Filters kept per tapped layer. Empty keeps every filter; a single
    /// entry applies to all layers.
    pub filters: Vec<usize>,
    pub metric: ImportanceMetric,
    pub window: WindowFunction,
    pub batch_size: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            projection: ProjectionConfig::default(),
            filters: Vec::new(),
            metric: ImportanceMetric::default(),
            window: WindowFunction::LastLayer,
            batch_size: 256,
        }
    }
}

impl ScoringConfig {
    /// Resolves [`ScoringConfig::filters`] to one count per tapped layer.
    pub fn filters_per_layer(&self, model: &Model) -> Result<Vec<usize>> {
        let all: Vec<usize> = (0..model.tapped_layers())
            .map(|t| model.tap_source(t).and_then(|l| l.out_channels()).unwrap_or(0))
            .collect();
        Ok(match self.filters.len() {
            0 => all,
            1 => vec![self.filters[0]; all.len()],
            n if n == all.len() => self.filters.clone(),
            n => return Err(Error::shape("filters per tapped layer", &[all.len()], &[n])),
        })
    }

    /// Content hash of the configuration together with the model weights.
    pub fn fingerprint(&self, model: &Model) -> String {
        let cfg = serde_json::to_vec(self).expect("config serializes");
        let mut weights = Vec::with_capacity(model.num_params() * 4);
        for p in model.params() {
            for v in p.data() {
                weights.extend_from_slice(&v.to_le_bytes());
            }
        }
        digest_hex(&[&cfg, &weights])
    }
}

/// Per-sample, per-layer instabilities `ξ⁽ˡ⁾_i` and their window aggregate `ξ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityMatrix {
    pub per_layer: Matrix,
    pub aggregated: Vec<f64>,
    pub fingerprint: String,
}

impl InstabilityMatrix {
    pub fn len(&self) -> usize {
        self.aggregated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aggregated.is_empty()
    }

    /// Removal mask for the `gamma` most unstable samples.
    pub fn mask(&self, gamma: usize, source: u64) -> Result<Mask> {
        compute_mask(&self.aggregated, gamma, source)
    }

    /// One line per sample: `index ξ ξ⁽¹⁾ … ξ⁽ᴸ⁾`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, xi) in self.aggregated.iter().enumerate() {
            write!(s, "{i} {xi}").expect("write to string");
            for v in self.per_layer.row(i) {
                write!(s, " {v}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.dump()).map_err(|e| Error::io(path, e))
    }
}

/// Raw distances `Δf` for every tapped layer: one `N × k⁽ˡ⁾` matrix per layer.
///
/// Each sample's perturbation is keyed by its position in `data`, so the
/// result does not depend on the batch size or the number of worker threads.
pub fn capture_distances(
    model: &Model,
    data: &Dataset,
    cfg: &ScoringConfig,
    noise: &dyn NoiseSource,
) -> Result<Vec<Matrix>> {
    if data.image_shape() != model.input_shape() {
        return Err(Error::shape("scoring dataset", &model.input_shape(), &data.image_shape()));
    }
    let k = cfg.filters_per_layer(model)?;
    let selection = select_sensitive_filters(model, &k, cfg.metric)?;
    let taps = model.taps().to_vec();

    // Feature-map sizes from a single-sample probe.
    let probe = model.forward(&data.images().gather_rows(&[0]), &taps)?;
    let projections = taps
        .iter()
        .enumerate()
        .map(|(l, t)| {
            let s = probe.features[t].shape();
            Projection::new(&cfg.projection, s[2] * s[3], l as u64)
        })
        .collect::<Result<Vec<_>>>()?;

    let ranges = sequential_batches(data.len(), cfg.batch_size.max(1));
    let parts = ranges
        .into_par_iter()
        .map(|r| -> Result<Vec<Matrix>> {
            let ids: Vec<usize> = r.collect();
            let (pixels, _) = data.batch(&ids);
            let clean_in = model.normalize_input(&pixels)?;
            let (noisy_in, _) = perturb(&clean_in, &ids, noise)?;
            let clean = model.forward_normalized(&clean_in, &taps)?;
            let noisy = model.forward_normalized(&noisy_in, &taps)?;
            taps.iter()
                .enumerate()
                .map(|(l, t)| {
                    let keep = &selection.per_layer[l];
                    let a = projections[l].apply(&select_channels(&clean.features[t], keep)?)?;
                    let b = projections[l].apply(&select_channels(&noisy.features[t], keep)?)?;
                    feature_distance(&a, &b)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_layer: Vec<Vec<Matrix>> = (0..taps.len()).map(|_| Vec::new()).collect();
    for part in parts {
        for (l, m) in part.into_iter().enumerate() {
            per_layer[l].push(m);
        }
    }
    per_layer.into_iter().map(Matrix::vstack).collect()
}

/// Normalizes each layer's distances over all samples and averages over
/// channels, giving the `N × L` matrix of `ξ⁽ˡ⁾`.
pub fn layer_matrix(distances: &[Matrix]) -> Result<Matrix> {
    let columns = distances
        .iter()
        .map(|d| layer_instability(&normalize_distances(d)?))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_columns(&columns)
}

pub fn instability_from_distances(distances: &[Matrix], window: &WindowFunction) -> Result<(Matrix, Vec<f64>)> {
    let per_layer = layer_matrix(distances)?;
    let alpha = window.weights(per_layer.cols())?;
    let xi = aggregate(&per_layer, &alpha)?;
    Ok((per_layer, xi))
}

pub fn score_dataset(model: &Model, data: &Dataset, cfg: &ScoringConfig) -> Result<InstabilityMatrix> {
    cfg.noise.validate()?;
    score_dataset_with(model, data, cfg, &cfg.noise)
}

/// [`score_dataset`] with an explicit perturbation source.
pub fn score_dataset_with(
    model: &Model,
    data: &Dataset,
    cfg: &ScoringConfig,
    noise: &dyn NoiseSource,
) -> Result<InstabilityMatrix> {
    if data.len() < 2 {
        return Err(Error::invalid("scoring needs at least 2 samples"));
    }
    let distances = capture_distances(model, data, cfg, noise)?;
    let (per_layer, aggregated) = instability_from_distances(&distances, &cfg.window)?;
    Ok(InstabilityMatrix {
        per_layer,
        aggregated,
        fingerprint: cfg.fingerprint(model),
    })
}

/// Outcome of the label-restricted two-phase scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhase {
    /// Mean phase-one statistic per label.
    pub label_scores: Vec<f64>,
    /// Labels whose samples form the scoring pool, ascending.
    pub labels: Vec<usize>,
    /// Dataset indices of the pool, ascending.
    pub pool: Vec<usize>,
    /// `ξ` for the pool members, in pool order.
    pub pool_scores: Vec<f64>,
    pub mask: Mask,
}

/// Two-phase selection from precomputed raw distances.
///
/// Phase one reduces each sample to the window-weighted mean of its raw
/// channel distances and averages that per label; the `budget` labels with
/// the highest means (ties to the lower label) form the pool. Phase two
/// normalizes, aggregates, and masks within the pool only; every sample
/// outside it is retained.
pub fn two_phase_from_distances(
    distances: &[Matrix],
    labels: &[usize],
    classes: usize,
    budget: usize,
    gamma: usize,
    window: &WindowFunction,
    source: u64,
) -> Result<TwoPhase> {
    if budget == 0 || budget > classes {
        return Err(Error::invalid(format!("label budget {budget} must be in 1..={classes}")));
    }
    let n = labels.len();
    if distances.iter().any(|d| d.rows() != n) {
        return Err(Error::invalid("distance matrices and labels disagree on sample count"));
    }
    let alpha = window.weights(distances.len())?;

    let raw_means = distances
        .iter()
        .map(layer_instability)
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        let d: f64 = raw_means.iter().zip(&alpha).map(|(m, a)| m[i] * a).sum();
        sums[y] += d;
        counts[y] += 1;
    }
    let label_scores: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NEG_INFINITY } else { s / c as f64 })
        .collect();
    let chosen = top_k_filters(&label_scores, budget);

    let pool: Vec<usize> = (0..n).filter(|&i| chosen.contains(&labels[i])).collect();
    if gamma > pool.len() {
        return Err(Error::invalid(format!(
            "cannot remove {gamma} samples from a pool of {}",
            pool.len()
        )));
    }
    let restricted: Vec<Matrix> = distances.iter().map(|d| d.select_rows(&pool)).collect();
    let (_, pool_scores) = instability_from_distances(&restricted, window)?;
    let removed: Vec<usize> = top_gamma(&pool_scores, gamma)?.into_iter().map(|j| pool[j]).collect();
    Ok(TwoPhase {
        label_scores,
        labels: chosen,
        pool,
        pool_scores,
        mask: Mask::from_removed(n, &removed, source)?,
    })
}

pub fn two_phase_score(
    model: &Model,
    data: &Dataset,
    budget: usize,
    gamma: usize,
    cfg: &ScoringConfig,
) -> Result<TwoPhase> {
    if budget == 0 || budget > data.classes() {
        return Err(Error::invalid(format!(
            "label budget {budget} must be in 1..={}",
            data.classes()
        )));
    }
    cfg.noise.validate()?;
    let distances = capture_distances(model, data, cfg, &cfg.noise)?;
    two_phase_from_distances(
        &distances,
        data.labels(),
        data.classes(),
        budget,
        gamma,
        &cfg.window,
        cfg.noise.seed,
    )
}
