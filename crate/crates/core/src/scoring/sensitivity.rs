use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Model};
use crate::tensor::Real;

/// Per-filter importance computed from the filter's weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceMetric {
    #[default]
    WeightL1Norm,
    WeightVariance,
}

impl ImportanceMetric {
    pub fn score<T: Real>(&self, filter: &[T]) -> f64 {
        match self {
            ImportanceMetric::WeightL1Norm => filter.iter().map(|w| w.as_f64().abs()).sum(),
            ImportanceMetric::WeightVariance => {
                let n = filter.len() as f64;
                let mean = filter.iter().map(|w| w.as_f64()).sum::<f64>() / n;
                filter.iter().map(|w| (w.as_f64() - mean).powi(2)).sum::<f64>() / n
            }
        }
    }
}

/// Selected filter indices per tapped layer, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitivitySelection {
    pub metric: ImportanceMetric,
    pub per_layer: Vec<Vec<usize>>,
}

/// Indices of the `k` largest scores; equal scores prefer the lower index.
pub fn top_k_filters(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = order[..k.min(order.len())].to_vec();
    keep.sort_unstable();
    keep
}

/// Keeps the `k[l]` most important filters of the layer feeding each tap.
pub fn select_sensitive_filters<T: Real>(
    model: &Model<T>,
    k: &[usize],
    metric: ImportanceMetric,
) -> Result<SensitivitySelection> {
    if k.len() != model.tapped_layers() {
        return Err(Error::shape("filters per tapped layer", &[model.tapped_layers()], &[k.len()]));
    }
    let mut per_layer = Vec::with_capacity(k.len());
    for (tap, &kl) in k.iter().enumerate() {
        let Some(Layer::Conv2d { weight, .. } | Layer::Dense { weight, .. }) = model.tap_source(tap) else {
            return Err(Error::invalid(format!("tap {tap} has no parameterized source layer")));
        };
        let out = weight.shape()[0];
        if kl == 0 || kl > out {
            return Err(Error::invalid(format!(
                "tap {tap}: cannot keep {kl} of {out} filters"
            )));
        }
        let scores: Vec<f64> = weight.data().chunks(weight.row_len()).map(|f| metric.score(f)).collect();
        per_layer.push(top_k_filters(&scores, kl));
    }
    Ok(SensitivitySelection { metric, per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvNetSpec;
    use crate::tensor::Tensor;

    #[test]
    fn picks_larger_norm() {
        assert_eq!(top_k_filters(&[0.1, 5.0], 1), vec![1]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(top_k_filters(&[1.0; 4], 2), vec![0, 1]);
    }

    #[test]
    fn metric_values() {
        let f = [1.0f64, -3.0, 2.0];
        assert_eq!(ImportanceMetric::WeightL1Norm.score(&f), 6.0);
        let v = ImportanceMetric::WeightVariance.score(&f);
        assert!((v - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_sort() {
        let m = ConvNetSpec::new([3, 8, 8], 4, &[8, 12]).build(21).unwrap();
        let sel = select_sensitive_filters(&m, &[3, 5], ImportanceMetric::WeightL1Norm).unwrap();
        for (tap, chosen) in sel.per_layer.iter().enumerate() {
            let w: &Tensor = match m.tap_source(tap).unwrap() {
                Layer::Conv2d { weight, .. } => weight,
                _ => unreachable!(),
            };
            let mut scored: Vec<(f64, usize)> = w
                .data()
                .chunks(w.row_len())
                .enumerate()
                .map(|(o, f)| (f.iter().map(|v| v.abs() as f64).sum(), o))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut expect: Vec<usize> = scored[..chosen.len()].iter().map(|s| s.1).collect();
            expect.sort_unstable();
            assert_eq!(chosen, &expect);
        }
    }

    #[test]
    fn too_many_filters_rejected() {
        let m = ConvNetSpec::new([1, 6, 6], 2, &[4]).build(0).unwrap();
        assert!(select_sensitive_filters(&m, &[5], ImportanceMetric::WeightL1Norm).is_err());
        assert!(select_sensitive_filters(&m, &[4, 1], ImportanceMetric::WeightL1Norm).is_err());
    }
}
