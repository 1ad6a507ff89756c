//! Softmax and label-smoothed cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - m).exp();
            z = z + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e = *e / z);
    }
    out
}

/// `log Σ exp(z)` computed with the max shift.
pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// `−Σ_c t_c · log softmax(z)_c` for one row.
pub fn cross_entropy_row<T: Real>(z: &[T], t: &[T]) -> T {
    let lse = log_sum_exp(z);
    let mut acc = T::zero();
    for (&zc, &tc) in z.iter().zip(t) {
        if tc != T::zero() {
            acc = acc - tc * (zc - lse);
        }
    }
    acc
}

pub fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= classes) {
        Some(index) => Err(Error::LabelOutOfRange {
            index,
            label: labels[index],
            classes,
        }),
        None => Ok(()),
    }
}

/// Row-major `(batch, classes)` targets `(1 − ε)·onehot(y) + ε/C`.
pub fn smoothed_targets<T: Real>(labels: &[usize], classes: usize, smoothing: f64) -> Result<Vec<T>> {
    check_labels(labels, classes)?;
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let off = T::of_f64(smoothing / classes as f64);
    let on = T::of_f64(1.0 - smoothing) + off;
    let mut t = vec![off; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        t[i * classes + y] = on;
    }
    Ok(t)
}

/// Mean label-smoothed cross-entropy over the batch; at `smoothing = 0`
/// this is plain cross-entropy.
pub fn smoothed_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize], smoothing: f64) -> Result<T> {
    let classes = logits_classes(logits, labels.len())?;
    let targets: Vec<T> = smoothed_targets(labels, classes, smoothing)?;
    let total: T = logits
        .data()
        .chunks(classes)
        .zip(targets.chunks(classes))
        .map(|(z, t)| cross_entropy_row(z, t))
        .sum();
    Ok(total / T::of_f64(labels.len() as f64))
}

pub(crate) fn logits_classes<T: Real>(logits: &Tensor<T>, batch: usize) -> Result<usize> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != batch || batch == 0 {
        return Err(Error::shape("logits", &[batch, 0], s));
    }
    Ok(s[1])
}
