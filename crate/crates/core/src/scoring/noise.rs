use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian input perturbation `δ ~ N(0, σ²)`, one draw per sample per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        let c = Self { sigma, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("noise sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.5, seed: 0 }
    }
}

/// Source of per-sample perturbations. Draws are keyed by the sample's
/// dataset index so results do not depend on batching.
pub trait NoiseSource: Sync {
    fn fill(&self, sample: usize, out: &mut [f32]);
}

impl NoiseSource for NoiseConfig {
    fn fill(&self, sample: usize, out: &mut [f32]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sample as u64);
        let dist = Normal::new(0.0, self.sigma).expect("validated sigma");
        for v in out {
            *v = dist.sample(&mut rng) as f32;
        }
    }
}

/// Always draws `δ = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&self, _sample: usize, out: &mut [f32]) {
        out.fill(0.0);
    }
}

/// Adds one perturbation per row of `x` (already normalized), keyed by `samples`.
/// Returns the perturbed batch and the draws.
pub fn perturb(x: &Tensor<f32>, samples: &[usize], noise: &dyn NoiseSource) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if x.dim0() != samples.len() {
        return Err(Error::shape("perturb sample ids", &[x.dim0()], &[samples.len()]));
    }
    let row = x.row_len();
    let mut delta = vec![0f32; x.len()];
    for (chunk, &s) in delta.chunks_mut(row).zip(samples) {
        noise.fill(s, chunk);
    }
    let out = x.data().iter().zip(&delta).map(|(&a, &d)| a + d).collect();
    Ok((Tensor::new(x.shape(), out)?, Tensor::new(x.shape(), delta)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_rejected() {
        assert!(NoiseConfig::new(0.0, 1).is_err());
        assert!(NoiseConfig::new(-0.5, 1).is_err());
        assert!(NoiseConfig::new(f64::NAN, 1).is_err());
    }

    #[test]
    fn same_seed_same_delta() {
        let cfg = NoiseConfig::new(0.5, 9).unwrap();
        let x = Tensor::zeros(&[3, 1, 2, 2]);
        let (_, a) = perturb(&x, &[0, 1, 2], &cfg).unwrap();
        let (_, b) = perturb(&x, &[0, 1, 2], &cfg).unwrap();
        assert_eq!(a, b);
        // Keyed by sample id, not batch position.
        let (_, c) = perturb(&x.gather_rows(&[0]), &[2], &cfg).unwrap();
        assert_eq!(c.data(), a.row(2));
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = Tensor::new(&[1, 1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let (y, d) = perturb(&x, &[0], &ZeroNoise).unwrap();
        assert_eq!(y, x);
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn draws_have_requested_moments() {
        let cfg = NoiseConfig::new(0.5, 1234).unwrap();
        let x = Tensor::zeros(&[1000, 1, 1, 1000]);
        let ids: Vec<usize> = (0..1000).collect();
        let (_, d) = perturb(&x, &ids, &cfg).unwrap();
        let n = d.len() as f64;
        let mean = d.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = d.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * 0.5 / 1e3, "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 0.005, "std {}", var.sqrt());
    }
}
