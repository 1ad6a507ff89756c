use crate::data::Mask;
use crate::error::{Error, Result};

/// Indices of the `gamma` largest scores, ascending. Among equal scores the
/// lower index is removed first.
pub fn top_gamma(xi: &[f64], gamma: usize) -> Result<Vec<usize>> {
    if gamma > xi.len() {
        return Err(Error::invalid(format!(
            "cannot remove {gamma} of {} samples",
            xi.len()
        )));
    }
    if let Some(i) = xi.iter().position(|v| v.is_nan()) {
        return Err(Error::invalid(format!("instability of sample {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..xi.len()).collect();
    order.sort_by(|&a, &b| xi[b].total_cmp(&xi[a]).then(a.cmp(&b)));
    order.truncate(gamma);
    order.sort_unstable();
    Ok(order)
}

/// `m_i = 0` for the `γ` most unstable samples, `1` otherwise.
pub fn compute_mask(xi: &[f64], gamma: usize, source: u64) -> Result<Mask> {
    Mask::from_removed(xi.len(), &top_gamma(xi, gamma)?, source)
}
