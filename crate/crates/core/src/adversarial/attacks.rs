use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    Ffgsm,
    Pgd,
    Mifgsm,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Fgsm, AttackKind::Ffgsm, AttackKind::Pgd, AttackKind::Mifgsm];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Ffgsm => "ffgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Mifgsm => "mifgsm",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}

/// An l∞-bounded attack in pixel space.
///
/// `alpha` is the per-step size; `fgsm` ignores it and steps by `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f32,
    pub alpha: f32,
    pub steps: usize,
    pub decay: f32,
    pub random_init: bool,
    pub seed: u64,
    /// Valid pixel range `[lo, hi]`.
    pub clamp: (f32, f32),
}

impl AttackSpec {
    pub fn fgsm(epsilon: f32) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            alpha: epsilon,
            steps: 1,
            decay: 0.0,
            random_init: false,
            seed: 0,
            clamp: (0.0, 1.0),
        }
    }

    /// Random start followed by one step of `alpha` (defaults 8/255, 10/255).
    pub fn ffgsm(epsilon: f32, alpha: f32) -> Self {
        Self {
            kind: AttackKind::Ffgsm,
            alpha,
            random_init: true,
            ..Self::fgsm(epsilon)
        }
    }

    /// Defaults 0.031, 0.031/4, 20 steps, random start.
    pub fn pgd(epsilon: f32, alpha: f32, steps: usize, random_init: bool) -> Self {
        Self {
            kind: AttackKind::Pgd,
            alpha,
            steps,
            random_init,
            ..Self::fgsm(epsilon)
        }
    }

    /// Defaults 8/255, 2/255, decay 1.0, 5 steps.
    pub fn mifgsm(epsilon: f32, alpha: f32, decay: f32, steps: usize) -> Self {
        Self {
            kind: AttackKind::Mifgsm,
            alpha,
            steps,
            decay,
            ..Self::fgsm(epsilon)
        }
    }

    /// The attack with its customary default budget.
    pub fn default_for(kind: AttackKind) -> Self {
        match kind {
            AttackKind::Fgsm => Self::fgsm(8.0 / 255.0),
            AttackKind::Ffgsm => Self::ffgsm(8.0 / 255.0, 10.0 / 255.0),
            AttackKind::Pgd => Self::pgd(0.031, 0.031 / 4.0, 20, true),
            AttackKind::Mifgsm => Self::mifgsm(8.0 / 255.0, 2.0 / 255.0, 1.0, 5),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("attack step must be >= 0, got {}", self.alpha)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("attack needs at least one step"));
        }
        if !(self.clamp.0 < self.clamp.1) {
            return Err(Error::invalid("attack clamp range is empty"));
        }
        Ok(())
    }

    /// Short parameter summary for reports.
    pub fn describe(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("eps={:.4}", self.epsilon),
            AttackKind::Ffgsm => format!("eps={:.4} alpha={:.4}", self.epsilon, self.alpha),
            AttackKind::Pgd => format!(
                "eps={:.4} alpha={:.4} steps={} rand_init={}",
                self.epsilon, self.alpha, self.steps, self.random_init
            ),
            AttackKind::Mifgsm => format!(
                "eps={:.4} alpha={:.4} steps={} decay={}",
                self.epsilon, self.alpha, self.steps, self.decay
            ),
        }
    }
}

/// `sign(v)` with `sign(0) = 0`.
pub fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `candidate` onto the ε-ball around `x` and the pixel range.
pub fn project_linf(x: &Tensor, candidate: &Tensor, epsilon: f32, clamp: (f32, f32)) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(&a, &c)| (a + (c - a).clamp(-epsilon, epsilon)).clamp(clamp.0, clamp.1))
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// `x + step · sign(g)`, unprojected.
pub fn sign_step(x: &Tensor, g: &[f32], step: f32) -> Tensor {
    let data = x.data().iter().zip(g).map(|(&a, &gv)| a + step * sign(gv)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Uniform start `clamp(x + U(−ε, ε))`, drawn per sample from `seed` keyed by `ids`.
pub fn random_start(x: &Tensor, ids: &[usize], epsilon: f32, seed: u64, clamp: (f32, f32)) -> Tensor {
    let row = x.row_len();
    let mut data = Vec::with_capacity(x.len());
    for (chunk, &id) in x.data().chunks(row).zip(ids) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        data.extend(chunk.iter().map(|&a| {
            let d = if epsilon > 0.0 { rng.random_range(-epsilon..=epsilon) } else { 0.0 };
            (a + d).clamp(clamp.0, clamp.1)
        }));
    }
    Tensor::new(x.shape(), data).expect("same shape")
}

/// MI-FGSM momentum `g ← decay·g + ∇/‖∇‖₁`, with the l1 norm taken per sample.
#[derive(Debug, Clone)]
pub struct MomentumAccumulator {
    decay: f32,
    row: usize,
    g: Vec<f32>,
}

impl MomentumAccumulator {
    pub fn new(decay: f32, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            decay,
            row: shape[1..].iter().product::<usize>().max(1),
            g: vec![0.0; len],
        }
    }

    pub fn update(&mut self, grad: &[f32]) {
        for (acc, gr) in self.g.chunks_mut(self.row).zip(grad.chunks(self.row)) {
            let l1: f32 = gr.iter().map(|v| v.abs()).sum();
            let inv = if l1 > 0.0 { 1.0 / l1 } else { 0.0 };
            for (a, &v) in acc.iter_mut().zip(gr) {
                *a = self.decay * *a + v * inv;
            }
        }
    }

    pub fn value(&self) -> &[f32] {
        &self.g
    }
}

fn input_grad(model: &Model, x: &Tensor, y: &[usize]) -> Result<Vec<f32>> {
    Ok(model.input_gradient(x, y)?.1.into_data())
}

pub fn fgsm(model: &Model, x: &Tensor, y: &[usize], epsilon: f32) -> Result<Tensor> {
    attack(model, x, y, &AttackSpec::fgsm(epsilon))
}

pub fn ffgsm(model: &Model, x: &Tensor, y: &[usize], epsilon: f32, alpha: f32, seed: u64) -> Result<Tensor> {
    attack(model, x, y, &AttackSpec::ffgsm(epsilon, alpha).with_seed(seed))
}

pub fn pgd(
    model: &Model,
    x: &Tensor,
    y: &[usize],
    epsilon: f32,
    alpha: f32,
    steps: usize,
    random_init: bool,
    seed: u64,
) -> Result<Tensor> {
    attack(model, x, y, &AttackSpec::pgd(epsilon, alpha, steps, random_init).with_seed(seed))
}

pub fn mifgsm(model: &Model, x: &Tensor, y: &[usize], epsilon: f32, alpha: f32, decay: f32, steps: usize) -> Result<Tensor> {
    attack(model, x, y, &AttackSpec::mifgsm(epsilon, alpha, decay, steps))
}

/// Runs `spec` on a pixel-space batch; random starts are keyed by batch position.
pub fn attack(model: &Model, x: &Tensor, y: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    let ids: Vec<usize> = (0..x.dim0()).collect();
    attack_with_ids(model, x, y, spec, &ids)
}

/// Runs `spec` with random starts keyed by `ids` (dataset indices), so the
/// result does not depend on how the set is batched.
pub fn attack_with_ids(model: &Model, x: &Tensor, y: &[usize], spec: &AttackSpec, ids: &[usize]) -> Result<Tensor> {
    spec.validate()?;
    if ids.len() != x.dim0() {
        return Err(Error::shape("attack sample ids", &[x.dim0()], &[ids.len()]));
    }
    let (eps, clamp) = (spec.epsilon, spec.clamp);
    match spec.kind {
        AttackKind::Fgsm => {
            let g = input_grad(model, x, y)?;
            Ok(project_linf(x, &sign_step(x, &g, eps), eps, clamp))
        }
        AttackKind::Ffgsm => {
            let start = random_start(x, ids, eps, spec.seed, clamp);
            let g = input_grad(model, &start, y)?;
            Ok(project_linf(x, &sign_step(&start, &g, spec.alpha), eps, clamp))
        }
        AttackKind::Pgd => {
            let mut adv = if spec.random_init {
                random_start(x, ids, eps, spec.seed, clamp)
            } else {
                x.clone()
            };
            for _ in 0..spec.steps {
                let g = input_grad(model, &adv, y)?;
                adv = project_linf(x, &sign_step(&adv, &g, spec.alpha), eps, clamp);
            }
            Ok(adv)
        }
        AttackKind::Mifgsm => {
            let mut adv = x.clone();
            let mut momentum = MomentumAccumulator::new(spec.decay, x.shape());
            for _ in 0..spec.steps {
                let g = input_grad(model, &adv, y)?;
                momentum.update(&g);
                adv = project_linf(x, &sign_step(&adv, momentum.value(), spec.alpha), eps, clamp);
            }
            Ok(adv)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(2.0), 1.0);
    }

    #[test]
    fn projection_respects_ball_and_range() {
        let x = Tensor::from_vec(vec![0.5, 0.99, 0.01]).reshape(&[1, 1, 1, 3]).unwrap();
        let c = Tensor::from_vec(vec![0.9, 1.5, -1.0]).reshape(&[1, 1, 1, 3]).unwrap();
        let p = project_linf(&x, &c, 0.1, (0.0, 1.0));
        assert_eq!(p.data(), &[0.6, 1.0, 0.0]);
    }

    #[test]
    fn momentum_two_steps_by_hand() {
        let mut m = MomentumAccumulator::new(0.5, &[1, 2]);
        m.update(&[1.0, -3.0]);
        assert_eq!(m.value(), &[0.25, -0.75]);
        m.update(&[2.0, 2.0]);
        assert_eq!(m.value(), &[0.125 + 0.5, -0.375 + 0.5]);
    }

    #[test]
    fn kinds_parse() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
        assert!("cw".parse::<AttackKind>().is_err());
    }
}
