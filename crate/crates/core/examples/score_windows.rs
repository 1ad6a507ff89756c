//! Scores one trained model under each layer window and compares the removed sets.

use qtart::data::{batches, generate_synthetic, NormalizationStats, SyntheticSpec};
use qtart::nn::ConvNetSpec;
use qtart::optim::{LrSchedule, OptimizerState};
use qtart::scoring::{score_dataset, ScoringConfig, WindowFunction};
use qtart::trainer::{train_epoch, Regime};

fn main() -> qtart::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::small(400, 4, 11))?;
    let mut model = ConvNetSpec::new([3, 8, 8], 4, &[8, 16]).build(11)?;
    model.set_input_norm(Some(NormalizationStats::compute(&data)))?;
    let mut opt = OptimizerState::new(0.05, 0.9, 5e-4)?;
    let schedule = LrSchedule::Constant { lr: 0.05 };
    for epoch in 0..4 {
        let order = batches(&data, 32, 11, epoch)?;
        train_epoch(&mut model, &mut opt, &data, &order, &schedule, epoch, 0.1, &mut Regime::Standard)?;
    }

    let gamma = 40;
    let mut sets = Vec::new();
    for window in [WindowFunction::LastLayer, WindowFunction::FirstHalf, WindowFunction::SecondHalf, WindowFunction::Gaussian] {
        let cfg = ScoringConfig { window: window.clone(), ..ScoringConfig::default() };
        let inst = score_dataset(&model, &data, &cfg)?;
        let mask = inst.mask(gamma, 0)?;
        let max = inst.aggregated.iter().cloned().fold(0.0, f64::max);
        println!("{:<12} max ξ {max:.3}  first removed {:?}", window.to_string(), &mask.removed()[..5]);
        sets.push((window, mask.removed()));
    }
    for (w, s) in &sets[1..] {
        let shared = s.iter().filter(|i| sets[0].1.contains(i)).count();
        println!("{w} shares {shared}/{gamma} removals with {}", sets[0].0);
    }
    Ok(())
}
