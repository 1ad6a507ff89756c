use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major `rows × cols` matrix of scores (samples × channels or samples × layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape("Matrix::new", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("columns of unequal length"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(columns.iter().map(|c| c[r]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..][..self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks row blocks with equal column counts.
    pub fn vstack(parts: Vec<Matrix>) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.cols != cols {
                return Err(Error::shape("Matrix::vstack", &[cols], &[p.cols]));
            }
            rows += p.rows;
            data.extend(p.data);
        }
        Ok(Self { rows, cols, data })
    }
}

/// `Δf(i, m) = ‖clean(i, m, ·) − noisy(i, m, ·)‖₂` over the projected dimension.
pub fn feature_distance(clean: &Tensor<f32>, noisy: &Tensor<f32>) -> Result<Matrix> {
    if clean.shape() != noisy.shape() || clean.shape().len() != 3 {
        return Err(Error::shape("feature_distance", clean.shape(), noisy.shape()));
    }
    let s = clean.shape();
    let p = s[2];
    let data = clean
        .data()
        .chunks(p)
        .zip(noisy.data().chunks(p))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Matrix::new(s[0], s[1], data)
}

/// Channel-wise min-max scaling over samples: each column is mapped onto
/// `[0, 1]`; a constant column maps to zeros.
pub fn normalize_distances(df: &Matrix) -> Result<Matrix> {
    if df.rows < 2 {
        return Err(Error::invalid(format!(
            "distance normalization needs at least 2 samples, got {}",
            df.rows
        )));
    }
    let mut out = Matrix::zeros(df.rows, df.cols);
    for c in 0..df.cols {
        let col = df.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span > 0.0 {
            for (r, v) in col.iter().enumerate() {
                out.data[r * df.cols + c] = (v - lo) / span;
            }
        }
    }
    Ok(out)
}

/// `ξ⁽ˡ⁾_i`: mean normalized distance over the kept channels of one layer.
pub fn layer_instability(normalized: &Matrix) -> Result<Vec<f64>> {
    if normalized.cols == 0 {
        return Err(Error::invalid("layer instability needs at least one channel"));
    }
    Ok((0..normalized.rows)
        .map(|r| normalized.row(r).iter().sum::<f64>() / normalized.cols as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_features_have_zero_distance() {
        let a = Tensor::new(&[2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        let d = feature_distance(&a, &a).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_four_five() {
        let clean = Tensor::zeros(&[1, 1, 2]);
        let noisy = Tensor::new(&[1, 1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(feature_distance(&clean, &noisy).unwrap().data(), &[5.0]);
    }

    #[test]
    fn min_max_scaling() {
        let m = Matrix::from_columns(&[vec![2.0, 4.0, 6.0], vec![7.0, 7.0, 7.0]]).unwrap();
        let n = normalize_distances(&m).unwrap();
        assert_eq!(n.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.column(1), vec![0.0, 0.0, 0.0]);
        assert!(normalize_distances(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn instability_is_row_mean() {
        let m = Matrix::from_columns(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(layer_instability(&m).unwrap(), vec![0.5, 0.5]);
        let single = Matrix::from_columns(&[vec![0.2, 0.9]]).unwrap();
        assert_eq!(layer_instability(&single).unwrap(), vec![0.2, 0.9]);
    }
}
