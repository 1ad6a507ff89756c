use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Per-layer multipliers `α⁽¹⁾ … α⁽ᴸ⁾` combining layer instabilities.
///
/// Layers are numbered `1..=L`; the halves split at `⌈L/2⌉`, which belongs to both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WindowFunction {
    LastLayer,
    FirstHalf,
    SecondHalf,
    /// `α ∝ exp(−(l − μ)² / 2σ²)` with `μ = (L+1)/2`, `σ = L/4`, summing to 1.
    Gaussian,
    Custom(Vec<f64>),
}

impl WindowFunction {
    pub fn weights(&self, layers: usize) -> Result<Vec<f64>> {
        if layers == 0 {
            return Err(Error::invalid("window over zero layers"));
        }
        let half = layers.div_ceil(2);
        let indicator = |keep: &dyn Fn(usize) -> bool| {
            (1..=layers).map(|l| if keep(l) { 1.0 } else { 0.0 }).collect()
        };
        Ok(match self {
            WindowFunction::LastLayer => indicator(&|l| l == layers),
            WindowFunction::FirstHalf => indicator(&|l| l <= half),
            WindowFunction::SecondHalf => indicator(&|l| l >= half),
            WindowFunction::Gaussian => {
                let mu = (layers as f64 + 1.0) / 2.0;
                let sigma = layers as f64 / 4.0;
                let raw: Vec<f64> = (1..=layers)
                    .map(|l| (-(l as f64 - mu).powi(2) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / total).collect()
            }
            WindowFunction::Custom(w) => {
                if w.len() != layers {
                    return Err(Error::shape("custom window", &[layers], &[w.len()]));
                }
                if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::invalid("window weights must be finite and non-negative"));
                }
                w.clone()
            }
        })
    }
}

impl fmt::Display for WindowFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowFunction::LastLayer => f.write_str("last-layer"),
            WindowFunction::FirstHalf => f.write_str("first-half"),
            WindowFunction::SecondHalf => f.write_str("second-half"),
            WindowFunction::Gaussian => f.write_str("gaussian"),
            WindowFunction::Custom(w) => {
                let parts: Vec<String> = w.iter().map(f64::to_string).collect();
                write!(f, "custom:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for WindowFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "last-layer" => WindowFunction::LastLayer,
            "first-half" => WindowFunction::FirstHalf,
            "second-half" => WindowFunction::SecondHalf,
            "gaussian" => WindowFunction::Gaussian,
            other => match other.strip_prefix("custom:") {
                Some(list) => WindowFunction::Custom(
                    list.split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| Error::Config(format!("bad custom window {list:?}")))?,
                ),
                None => return Err(Error::Config(format!("unknown window function {other:?}"))),
            },
        })
    }
}

impl TryFrom<String> for WindowFunction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WindowFunction> for String {
    fn from(w: WindowFunction) -> String {
        w.to_string()
    }
}

/// `ξ_i = Σ_l ξ⁽ˡ⁾_i α⁽ˡ⁾` for an `N × L` layer matrix.
pub fn aggregate(per_layer: &Matrix, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != per_layer.cols() {
        return Err(Error::shape("aggregate window", &[per_layer.cols()], &[alpha.len()]));
    }
    Ok((0..per_layer.rows())
        .map(|r| {
            per_layer
                .row(r)
                .iter()
                .zip(alpha)
                .fold(0.0, |acc, (&x, &a)| acc + x * a)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_windows() {
        assert_eq!(WindowFunction::LastLayer.weights(4).unwrap(), vec![0., 0., 0., 1.]);
        assert_eq!(WindowFunction::FirstHalf.weights(4).unwrap(), vec![1., 1., 0., 0.]);
        assert_eq!(WindowFunction::SecondHalf.weights(4).unwrap(), vec![0., 1., 1., 1.]);
        assert_eq!(WindowFunction::FirstHalf.weights(3).unwrap(), vec![1., 1., 0.]);
        assert_eq!(WindowFunction::SecondHalf.weights(3).unwrap(), vec![0., 1., 1.]);
    }

    #[test]
    fn gaussian_is_symmetric_and_normalized() {
        let w = WindowFunction::Gaussian.weights(5).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - w[4]).abs() < 1e-15 && (w[1] - w[3]).abs() < 1e-15);
        assert!(w[2] > w[1] && w[1] > w[0]);
        let ratio = w[1] / w[2];
        assert!((ratio - (-1.0f64 / (2.0 * 1.5625)).exp()).abs() < 1e-12);
    }

    #[test]
    fn custom_validated() {
        assert!(WindowFunction::Custom(vec![1.0]).weights(2).is_err());
        assert!(WindowFunction::Custom(vec![1.0, -1.0]).weights(2).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for w in [
            WindowFunction::LastLayer,
            WindowFunction::FirstHalf,
            WindowFunction::SecondHalf,
            WindowFunction::Gaussian,
            WindowFunction::Custom(vec![0.5, 0.25]),
        ] {
            assert_eq!(w.to_string().parse::<WindowFunction>().unwrap(), w);
        }
        assert!("middle".parse::<WindowFunction>().is_err());
    }

    #[test]
    fn aggregate_last_layer_and_zero() {
        let m = Matrix::from_columns(&[vec![0.1, 0.2], vec![0.3, 0.7]]).unwrap();
        assert_eq!(aggregate(&m, &[0.0, 1.0]).unwrap(), m.column(1));
        assert_eq!(aggregate(&m, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(aggregate(&m, &[1.0]).is_err());
    }
}
