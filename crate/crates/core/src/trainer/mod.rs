//! The training protocol: warm up on all data until `τ`, score and freeze a
//! removal mask, then finish on the retained subset.

mod checkpoint;
mod config;
mod experiment;

pub use checkpoint::Checkpoint;
pub use config::{
    AdvSection, DataSection, EvalSection, ExperimentConfig, Mode, ModelSection, OptimSection, RunSection,
    ScheduleKind, ScoringSection, Seeds,
};
pub use experiment::{run_experiment, EpochRecord, Experiment, TrainReport};

use rayon::prelude::*;

use crate::adversarial::{FastAdv, FreeAdv};
use crate::autodiff::Tape;
use crate::data::{sequential_batches, Dataset};
use crate::error::{Error, Result};
use crate::loss;
use crate::nn::Model;
use crate::optim::{LrSchedule, OptimizerState};
use crate::tensor::{Real, Tensor};

/// How each minibatch turns into weight updates.
#[derive(Debug, Clone)]
pub enum Regime {
    Standard,
    Fast(FastAdv),
    Free(FreeAdv),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Optimizer steps taken.
    pub iterations: usize,
    pub samples: usize,
}

/// One pass over `batches` (indices into `data`).
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut Model,
    opt: &mut OptimizerState,
    data: &Dataset,
    batches: &[Vec<usize>],
    schedule: &LrSchedule,
    epoch: usize,
    smoothing: f64,
    regime: &mut Regime,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut iterations = 0;
    for (it, idx) in batches.iter().enumerate() {
        opt.lr = schedule.lr_at(epoch, it, batches.len());
        let (x, y) = data.batch(idx);
        match regime {
            Regime::Standard => {
                let g = model.loss_gradients(&x, &y, smoothing, None, false)?;
                opt.step(&mut model.params_mut(), &g.params)?;
                loss_sum += g.loss as f64;
                loss_count += 1;
                iterations += 1;
            }
            Regime::Fast(fast) => {
                let adv = fast.adversarial_batch(model, &x, &y, idx, epoch)?;
                let g = model.loss_gradients(&adv, &y, smoothing, None, false)?;
                opt.step(&mut model.params_mut(), &g.params)?;
                loss_sum += g.loss as f64;
                loss_count += 1;
                iterations += 1;
            }
            Regime::Free(free) => {
                let losses = free.replay(model, opt, &x, &y, smoothing)?;
                iterations += losses.len();
                loss_count += losses.len();
                loss_sum += losses.iter().map(|&l| l as f64).sum::<f64>();
            }
        }
    }
    Ok(EpochStats {
        mean_loss: if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 },
        iterations,
        samples: batches.iter().map(Vec::len).sum(),
    })
}

/// Top-1 accuracy (%) on `test`.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<f64> {
    let correct = sequential_batches(test.len(), 256)
        .into_par_iter()
        .map(|r| {
            let ids: Vec<usize> = r.collect();
            let (x, y) = test.batch(&ids);
            let pred = model.predict(&x)?;
            Ok(pred.iter().zip(&y).filter(|(p, t)| p == t).count())
        })
        .sum::<Result<usize>>()?;
    Ok(100.0 * correct as f64 / test.len() as f64)
}

fn mask_weights<T: Real>(mask: &[bool], batch: usize) -> Result<Vec<T>> {
    if mask.len() != batch {
        return Err(Error::shape("mask slice", &[batch], &[mask.len()]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("mask slice has no retained samples"));
    }
    Ok(mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect())
}

/// `(1/‖m‖₀) Σ m_i ℓ_ε(F(x_i), y_i)` over a batch of logits.
pub fn masked_loss<T: Real>(logits: &Tensor<T>, labels: &[usize], mask: &[bool], smoothing: f64) -> Result<T> {
    Ok(masked_loss_with_grad(logits, labels, mask, smoothing)?.0)
}

/// [`masked_loss`] and its gradient with respect to the logits.
pub fn masked_loss_with_grad<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
    mask: &[bool],
    smoothing: f64,
) -> Result<(T, Tensor<T>)> {
    let classes = loss::logits_classes(logits, labels.len())?;
    let weights = mask_weights::<T>(mask, labels.len())?;
    let targets = loss::smoothed_targets::<T>(labels, classes, smoothing)?;
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone(), true);
    let l = tape.smoothed_cross_entropy(z, &targets, &weights)?;
    let mut g = tape.backward(l)?;
    Ok((tape.value(l).data()[0], g.take(z).expect("logit gradient")))
}

/// Parameter gradients of the masked loss for a batch.
pub fn masked_loss_gradients(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    mask: &[bool],
    smoothing: f64,
) -> Result<crate::nn::LossGradients> {
    let weights = mask_weights::<f32>(mask, labels.len())?;
    model.loss_gradients(x, labels, smoothing, Some(&weights), false)
}

/// Closed-form optimizer steps skipped by removing `γ` samples after `τ`:
/// `γ (E − τ) / batch`.
pub fn iterations_saved(gamma: usize, epochs: usize, tau: usize, batch_size: usize) -> Result<f64> {
    if tau >= epochs {
        return Err(Error::invalid(format!("tau {tau} must be below epochs {epochs}")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    Ok(gamma as f64 * (epochs - tau) as f64 / batch_size as f64)
}

/// Steps actually skipped when each post-`τ` epoch runs `⌈(N−γ)/batch⌉`
/// instead of `⌈N/batch⌉` iterations.
pub fn iterations_saved_observed(n: usize, gamma: usize, epochs: usize, tau: usize, batch_size: usize) -> usize {
    let per = |m: usize| m.div_ceil(batch_size.max(1));
    (epochs.saturating_sub(tau)) * (per(n) - per(n.saturating_sub(gamma)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_iteration_counts() {
        assert_eq!(iterations_saved(12, 300, 50, 128).unwrap(), 23.4375);
        assert!((iterations_saved(125, 350, 50, 128).unwrap() - 292.96875).abs() < 1e-12);
        assert_eq!(iterations_saved(0, 10, 2, 4).unwrap(), 0.0);
        assert!(iterations_saved(1, 5, 5, 4).is_err());
    }

    #[test]
    fn observed_savings_within_ceiling_slack() {
        for gamma in 0..300 {
            let closed = iterations_saved(gamma, 40, 10, 32).unwrap();
            let obs = iterations_saved_observed(1000, gamma, 40, 10, 32) as f64;
            assert!((closed - obs).abs() < 30.0, "gamma {gamma}: {closed} vs {obs}");
        }
    }

    #[test]
    fn masked_zero_has_no_gradient() {
        let z = Tensor::<f64>::new(&[2, 3], vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.4]).unwrap();
        let (l, g) = masked_loss_with_grad(&z, &[2, 0], &[false, true], 0.1).unwrap();
        assert!(g.row(0).iter().all(|&v| v == 0.0));
        let only = Tensor::<f64>::new(&[1, 3], z.row(1).to_vec()).unwrap();
        let expect = loss::smoothed_cross_entropy(&only, &[0], 0.1).unwrap();
        assert!((l - expect).abs() < 1e-12);
        assert!(masked_loss(&z, &[2, 0], &[false, false], 0.1).is_err());
    }
}
