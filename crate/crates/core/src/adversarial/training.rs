use serde::{Deserialize, Serialize};

use super::attacks::{project_linf, random_start, sign, sign_step};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::optim::{LrSchedule, OptimizerState};
use crate::tensor::Tensor;
use crate::trainer::{train_epoch, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvRegime {
    /// One FGSM step from a uniform random start per minibatch.
    FastSingleStep,
    /// Each minibatch replayed `m` times, recycling input gradients into a
    /// persistent perturbation.
    FreeReplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvTrainSpec {
    pub regime: AdvRegime,
    pub epsilon: f32,
    /// FGSM step after the random start (fast regime only).
    pub alpha: f32,
    /// Minibatch replay count `m` (free regime only).
    pub replays: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub seed: u64,
}

impl AdvTrainSpec {
    /// `α = 1.25 ε`, the usual companion step for the random start.
    pub fn fast(epsilon: f32) -> Self {
        Self {
            regime: AdvRegime::FastSingleStep,
            epsilon,
            alpha: 1.25 * epsilon,
            replays: 1,
            lr_min: 0.0,
            lr_max: 0.2,
            seed: 0,
        }
    }

    pub fn free(epsilon: f32, replays: usize) -> Self {
        Self {
            regime: AdvRegime::FreeReplay,
            replays,
            ..Self::fast(epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.alpha >= 0.0) {
            return Err(Error::invalid("adversarial epsilon and step must be >= 0"));
        }
        if self.replays == 0 {
            return Err(Error::invalid("free training needs at least one replay"));
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::invalid("cyclic learning-rate bounds need 0 <= min <= max, max > 0"));
        }
        Ok(())
    }

    /// Triangle schedule over `passes` epochs.
    pub fn schedule(&self, passes: usize) -> LrSchedule {
        LrSchedule::Cyclic {
            min: self.lr_min,
            max: self.lr_max,
            epochs: passes,
        }
    }

    /// Passes over the data for a budget of `epochs`: `E/m` when replaying.
    pub fn passes(&self, epochs: usize) -> usize {
        match self.regime {
            AdvRegime::FastSingleStep => epochs,
            AdvRegime::FreeReplay => (epochs / self.replays).max(1),
        }
    }
}

/// Fast single-step adversarial batches.
#[derive(Debug, Clone)]
pub struct FastAdv {
    spec: AdvTrainSpec,
}

impl FastAdv {
    pub fn new(spec: AdvTrainSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &AdvTrainSpec {
        &self.spec
    }

    /// `x + clamp(δ₀ + α·sign ∇, −ε, ε)` with `δ₀ ~ U(−ε, ε)` drawn from
    /// `(seed, epoch, sample id)`.
    pub fn adversarial_batch(&self, model: &Model, x: &Tensor, y: &[usize], ids: &[usize], epoch: usize) -> Result<Tensor> {
        let eps = self.spec.epsilon;
        let seed = self.spec.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let start = random_start(x, ids, eps, seed, (0.0, 1.0));
        let (_, g) = model.input_gradient(&start, y)?;
        Ok(project_linf(x, &sign_step(&start, g.data(), self.spec.alpha), eps, (0.0, 1.0)))
    }
}

/// Free adversarial training state: the perturbation persists across replays
/// and across minibatches.
#[derive(Debug, Clone)]
pub struct FreeAdv {
    spec: AdvTrainSpec,
    delta: Option<Tensor>,
}

impl FreeAdv {
    pub fn new(spec: AdvTrainSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, delta: None })
    }

    pub fn spec(&self) -> &AdvTrainSpec {
        &self.spec
    }

    /// Current perturbation, shaped like the last minibatch.
    pub fn delta(&self) -> Option<&Tensor> {
        self.delta.as_ref()
    }

    pub fn set_delta(&mut self, delta: Option<Tensor>) {
        self.delta = delta;
    }

    fn delta_for(&self, x: &Tensor) -> Tensor {
        let Some(d) = &self.delta else {
            return Tensor::zeros(x.shape());
        };
        if d.shape()[1..] != x.shape()[1..] {
            return Tensor::zeros(x.shape());
        }
        // Reuse the leading rows; pad with zeros if this batch is larger.
        let mut data = d.data()[..d.len().min(x.len())].to_vec();
        data.resize(x.len(), 0.0);
        Tensor::new(x.shape(), data).expect("batch shape")
    }

    /// Replays one minibatch `m` times. Every pass updates the weights with
    /// its parameter gradients and `δ` with `ε·sign` of its input gradient.
    /// Returns the per-replay losses.
    pub fn replay(
        &mut self,
        model: &mut Model,
        opt: &mut OptimizerState,
        x: &Tensor,
        y: &[usize],
        smoothing: f64,
    ) -> Result<Vec<f32>> {
        let eps = self.spec.epsilon;
        let mut delta = self.delta_for(x);
        let mut losses = Vec::with_capacity(self.spec.replays);
        for _ in 0..self.spec.replays {
            let adv = x.add(&delta)?.map(|v| v.clamp(0.0, 1.0));
            let lg = model.loss_gradients(&adv, y, smoothing, None, true)?;
            opt.step(&mut model.params_mut(), &lg.params)?;
            let gx = lg.input.expect("input gradient requested");
            for (d, &g) in delta.data_mut().iter_mut().zip(gx.data()) {
                *d = (*d + eps * sign(g)).clamp(-eps, eps);
            }
            losses.push(lg.loss);
        }
        self.delta = Some(delta);
        Ok(losses)
    }
}

/// Shared loop settings for the stand-alone adversarial trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub smoothing: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            smoothing: 0.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            shuffle_seed: 0,
        }
    }
}

fn run_regime(model: &mut Model, data: &Dataset, spec: &AdvTrainSpec, opts: &TrainOptions, mut regime: Regime) -> Result<Vec<f64>> {
    let passes = spec.passes(opts.epochs);
    let schedule = spec.schedule(passes);
    let mut opt = OptimizerState::new(spec.lr_max, opts.momentum, opts.weight_decay)?;
    (0..passes)
        .map(|epoch| {
            let batches = crate::data::batches(data, opts.batch_size, opts.shuffle_seed, epoch)?;
            let stats = train_epoch(model, &mut opt, data, &batches, &schedule, epoch, opts.smoothing, &mut regime)?;
            Ok(stats.mean_loss)
        })
        .collect()
}

/// Fast single-step adversarial training with a cyclic learning rate.
/// Returns the mean training loss of each epoch.
pub fn adversarial_train_fast(model: &mut Model, data: &Dataset, spec: &AdvTrainSpec, opts: &TrainOptions) -> Result<Vec<f64>> {
    if spec.regime != AdvRegime::FastSingleStep {
        return Err(Error::invalid("adversarial_train_fast needs the fast-single-step regime"));
    }
    run_regime(model, data, spec, opts, Regime::Fast(FastAdv::new(*spec)?))
}

/// Free adversarial training over `E/m` passes. Returns the mean loss of each pass.
pub fn adversarial_train_free(model: &mut Model, data: &Dataset, spec: &AdvTrainSpec, opts: &TrainOptions) -> Result<Vec<f64>> {
    if spec.regime != AdvRegime::FreeReplay {
        return Err(Error::invalid("adversarial_train_free needs the free-replay regime"));
    }
    run_regime(model, data, spec, opts, Regime::Free(FreeAdv::new(*spec)?))
}
