//! Gradient-sign attacks, robustness evaluation, adversarial training, and
//! cross-model transfer.
//!
//! Attacks work on pixel-space images in `[0, 1]`; models carry their own input
//! normalization, so the ε-ball is always measured in pixel units.

mod attacks;
mod training;

pub use attacks::{
    attack, attack_with_ids, ffgsm, fgsm, mifgsm, pgd, project_linf, random_start, sign, sign_step, AttackKind,
    AttackSpec, MomentumAccumulator,
};
pub use training::{
    adversarial_train_fast, adversarial_train_free, AdvRegime, AdvTrainSpec, FastAdv, FreeAdv, TrainOptions,
};

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sequential_batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::Model;

const EVAL_BATCH: usize = 128;

/// Correct predictions of `target` on adversaries crafted against `source`.
fn correct_under_attack(source: &Model, target: &Model, test: &Dataset, spec: &AttackSpec) -> Result<usize> {
    spec.validate()?;
    sequential_batches(test.len(), EVAL_BATCH)
        .into_par_iter()
        .map(|r| {
            let ids: Vec<usize> = r.collect();
            let (x, y) = test.batch(&ids);
            let adv = attack_with_ids(source, &x, &y, spec, &ids)?;
            let pred = target.predict(&adv)?;
            Ok(pred.iter().zip(&y).filter(|(p, t)| p == t).count())
        })
        .sum::<Result<usize>>()
}

/// Accuracy (%) on the test set after attacking every sample with `spec`.
pub fn evaluate_robustness(model: &Model, test: &Dataset, spec: &AttackSpec) -> Result<f64> {
    let correct = correct_under_attack(model, model, test, spec)?;
    Ok(100.0 * correct as f64 / test.len() as f64)
}

/// Adversarial accuracy of one target under attacks from several sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub target: String,
    pub sources: Vec<String>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over all sources.
    pub std: f64,
    /// Whether the target itself is among the sources (the mean includes it).
    pub includes_self: bool,
    pub attack: AttackSpec,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl TransferMatrix {
    pub fn from_entries(target: &str, sources: Vec<String>, accuracies: Vec<f64>, attack: AttackSpec) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            includes_self: sources.iter().any(|s| s == target),
            target: target.to_string(),
            sources,
            accuracies,
            mean,
            std,
            attack,
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("target {} under {} ({})\n", self.target, self.attack.kind, self.attack.describe());
        for (src, acc) in self.sources.iter().zip(&self.accuracies) {
            let tag = if *src == self.target { " (self)" } else { "" };
            writeln!(s, "  {src:<16} {acc:>7.2}{tag}").expect("write to string");
        }
        writeln!(s, "  {:<16} {:>7.2} ± {:.2}", "mean", self.mean, self.std).expect("write to string");
        s
    }
}

/// Attacks `target` with adversaries generated from each named source model.
pub fn transfer_eval(
    target: (&str, &Model),
    sources: &[(&str, &Model)],
    test: &Dataset,
    spec: &AttackSpec,
) -> Result<TransferMatrix> {
    let (target_name, target_model) = target;
    if sources.is_empty() {
        return Err(Error::invalid("transfer evaluation needs at least one source"));
    }
    for (name, m) in sources {
        if m.input_shape() != target_model.input_shape() || m.classes() != target_model.classes() {
            return Err(Error::shape(
                format!("source model {name}"),
                &[target_model.classes()],
                &[m.classes()],
            ));
        }
    }
    let accuracies = sources
        .iter()
        .map(|(_, m)| Ok(100.0 * correct_under_attack(m, target_model, test, spec)? as f64 / test.len() as f64))
        .collect::<Result<Vec<_>>>()?;
    let names = sources.iter().map(|(n, _)| n.to_string()).collect();
    Ok(TransferMatrix::from_entries(target_name, names, accuracies, *spec))
}

/// One row of a robustness report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRecord {
    pub attack: AttackKind,
    pub params: AttackSpec,
    pub accuracy: f64,
}

/// Clean accuracy plus one record per attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub method: String,
    pub clean_accuracy: f64,
    pub records: Vec<RobustnessRecord>,
}

impl RobustnessReport {
    pub fn evaluate(method: &str, model: &Model, test: &Dataset, specs: &[AttackSpec]) -> Result<Self> {
        let clean_accuracy = crate::trainer::evaluate(model, test)?;
        let records = specs
            .iter()
            .map(|s| {
                Ok(RobustnessRecord {
                    attack: s.kind,
                    params: *s,
                    accuracy: evaluate_robustness(model, test, s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method: method.to_string(),
            clean_accuracy,
            records,
        })
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<8} {:<48} {:>8}\n", "attack", "params", "acc%");
        writeln!(s, "{:<8} {:<48} {:>8.2}", "clean", "-", self.clean_accuracy).expect("write to string");
        for r in &self.records {
            writeln!(s, "{:<8} {:<48} {:>8.2}", r.attack.name(), r.params.describe(), r.accuracy).expect("write to string");
        }
        s
    }

    /// Headered text table `attack method accuracy` for polar plots.
    pub fn polar_data(&self) -> String {
        polar_data(std::slice::from_ref(self))
    }
}

/// Polar-plot rows for several methods: `attack<TAB>method<TAB>accuracy`.
pub fn polar_data(reports: &[RobustnessReport]) -> String {
    let mut s = String::from("attack\tmethod\taccuracy\n");
    for rep in reports {
        for r in &rep.records {
            writeln!(s, "{}\t{}\t{:.4}", r.attack, rep.method, r.accuracy).expect("write to string");
        }
    }
    s
}
