//! SGD with momentum and weight decay, plus learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "optimizer needs lr > 0, momentum in [0, 1), decay >= 0 (got {lr}, {momentum}, {weight_decay})"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn with_velocity(mut self, velocity: Vec<Tensor<T>>) -> Self {
        self.velocity = velocity;
        self
    }

    /// `v ← μv + g + λw; w ← w − lr·v`. Velocity buffers are created on first use.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("sgd_step parameter count", &[params.len()], &[grads.len()]));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::shape("sgd_step velocity count", &[self.velocity.len()], &[params.len()]));
        }
        let (lr, mu, wd) = (T::of_f64(self.lr), T::of_f64(self.momentum), T::of_f64(self.weight_decay));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::shape("sgd_step", p.shape(), g.shape()));
            }
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = mu * *vi + gi + wd * *w;
                *w = *w - lr * *vi;
            }
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn sgd_step<T: Real>(state: &mut OptimizerState<T>, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
    state.step(params, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `base · mult^k` where `k` counts milestones `<= epoch` (0-based epochs).
    Step {
        base: f64,
        milestones: Vec<usize>,
        mult: f64,
    },
    /// Triangle `min → max → min` over `epochs`, peaking at the midpoint.
    Cyclic { min: f64, max: f64, epochs: usize },
}

impl LrSchedule {
    /// Learning rate at `iteration` of `iters_in_epoch` within `epoch`.
    pub fn lr_at(&self, epoch: usize, iteration: usize, iters_in_epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::Step { base, milestones, mult } => {
                let k = milestones.iter().filter(|&&m| m <= epoch).count();
                base * mult.powi(k as i32)
            }
            LrSchedule::Cyclic { min, max, epochs } => {
                let frac = if iters_in_epoch == 0 {
                    0.0
                } else {
                    iteration as f64 / iters_in_epoch as f64
                };
                let t = ((epoch as f64 + frac) / (*epochs).max(1) as f64).clamp(0.0, 1.0);
                min + (max - min) * (1.0 - (2.0 * t - 1.0).abs())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut s = OptimizerState::<f32>::new(0.1, 0.0, 0.0).unwrap();
        let mut w = Tensor::from_vec(vec![1.0f32]);
        s.step(&mut [&mut w], &[Tensor::from_vec(vec![1.0])]).unwrap();
        assert!((w.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn momentum_two_steps() {
        let mut s = OptimizerState::<f64>::new(1.0, 0.9, 0.0).unwrap();
        let mut w = Tensor::from_vec(vec![0.0f64]);
        for _ in 0..2 {
            s.step(&mut [&mut w], &[Tensor::from_vec(vec![1.0])]).unwrap();
        }
        assert!((w.data()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let mut s = OptimizerState::<f64>::new(0.5, 0.0, 0.1).unwrap();
        let mut w = Tensor::from_vec(vec![2.0f64]);
        s.step(&mut [&mut w], &[Tensor::from_vec(vec![0.0])]).unwrap();
        assert!((w.data()[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = OptimizerState::<f32>::new(0.1, 0.0, 0.0).unwrap();
        let mut w = Tensor::from_vec(vec![1.0f32, 2.0]);
        assert!(s.step(&mut [&mut w], &[Tensor::from_vec(vec![1.0])]).is_err());
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(OptimizerState::<f32>::new(0.0, 0.0, 0.0).is_err());
        assert!(OptimizerState::<f32>::new(0.1, 1.0, 0.0).is_err());
        assert!(OptimizerState::<f32>::new(0.1, 0.0, -1.0).is_err());
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut s = OptimizerState::<f32>::new(0.05, 0.9, 5e-4).unwrap();
            let mut w = Tensor::from_vec((0..50).map(|i| (i as f32).sin()).collect());
            for k in 0..5 {
                let g = Tensor::from_vec((0..50).map(|i| ((i + k) as f32).cos()).collect());
                s.step(&mut [&mut w], &[g]).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step {
            base: 0.1,
            milestones: vec![2],
            mult: 0.1,
        };
        assert_eq!(s.lr_at(1, 0, 10), 0.1);
        assert!((s.lr_at(2, 0, 10) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn cyclic_schedule_triangle() {
        let s = LrSchedule::Cyclic {
            min: 0.0,
            max: 0.1,
            epochs: 4,
        };
        assert_eq!(s.lr_at(0, 0, 10), 0.0);
        assert_eq!(s.lr_at(2, 0, 10), 0.1);
        assert_eq!(s.lr_at(4, 0, 10), 0.0);
        assert!((s.lr_at(1, 0, 10) - 0.05).abs() < 1e-15);
    }
}
