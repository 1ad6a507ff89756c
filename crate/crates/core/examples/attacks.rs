//! Trains a small classifier and evaluates it under each attack and budget.

use qtart::adversarial::{AttackKind, AttackSpec, RobustnessReport};
use qtart::data::{batches, generate_synthetic, NormalizationStats, SyntheticSpec};
use qtart::nn::ConvNetSpec;
use qtart::optim::{LrSchedule, OptimizerState};
use qtart::trainer::{train_epoch, Regime};

fn main() -> qtart::Result<()> {
    let spec = SyntheticSpec::small(400, 4, 5);
    let (train, test) = (generate_synthetic(&spec)?, generate_synthetic(&spec.test_split(200))?);
    let mut model = ConvNetSpec::new([3, 8, 8], 4, &[8, 16]).build(5)?;
    model.set_input_norm(Some(NormalizationStats::compute(&train)))?;
    let mut opt = OptimizerState::new(0.05, 0.9, 5e-4)?;
    for epoch in 0..6 {
        let order = batches(&train, 32, 5, epoch)?;
        train_epoch(&mut model, &mut opt, &train, &order, &LrSchedule::Constant { lr: 0.05 }, epoch, 0.0, &mut Regime::Standard)?;
    }
    let mut specs: Vec<AttackSpec> = AttackKind::ALL.iter().map(|&k| AttackSpec::default_for(k)).collect();
    for eps in [2.0, 4.0, 16.0] {
        let e = eps / 255.0;
        specs.push(AttackSpec::pgd(e, e / 4.0, 10, true));
    }
    println!("{}", RobustnessReport::evaluate("standard", &model, &test, &specs)?.table());
    Ok(())
}
