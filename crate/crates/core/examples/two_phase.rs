//! Restricts removal to the labels whose samples react most to noise.

use qtart::data::{generate_synthetic, NormalizationStats, SyntheticSpec};
use qtart::nn::ConvNetSpec;
use qtart::scoring::{two_phase_score, ScoringConfig};

fn main() -> qtart::Result<()> {
    let data = generate_synthetic(&SyntheticSpec::small(300, 5, 2))?;
    let mut model = ConvNetSpec::new([3, 8, 8], 5, &[6, 8]).build(2)?;
    model.set_input_norm(Some(NormalizationStats::compute(&data)))?;
    for budget in 1..=3 {
        let tp = two_phase_score(&model, &data, budget, 20, &ScoringConfig::default())?;
        let scores: Vec<String> = tp.label_scores.iter().map(|s| format!("{s:.3}")).collect();
        println!(
            "budget {budget}: labels {:?} (scores [{}]), pool {} samples, removed {}",
            tp.labels,
            scores.join(", "),
            tp.pool.len(),
            tp.mask.gamma()
        );
    }
    Ok(())
}
