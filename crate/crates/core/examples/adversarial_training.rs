//! Fast and free adversarial training from the same start, then PGD accuracy.

use qtart::adversarial::{adversarial_train_fast, adversarial_train_free, evaluate_robustness, AdvTrainSpec, AttackSpec, TrainOptions};
use qtart::data::{generate_synthetic, NormalizationStats, SyntheticSpec};
use qtart::nn::ConvNetSpec;
use qtart::trainer::evaluate;

fn main() -> qtart::Result<()> {
    let spec = SyntheticSpec::small(400, 4, 8);
    let (train, test) = (generate_synthetic(&spec)?, generate_synthetic(&spec.test_split(200))?);
    let mut start = ConvNetSpec::new([3, 8, 8], 4, &[8, 16]).build(8)?;
    start.set_input_norm(Some(NormalizationStats::compute(&train)))?;
    let opts = TrainOptions { epochs: 8, batch_size: 32, ..TrainOptions::default() };
    let eps = 8.0 / 255.0;
    let pgd = AttackSpec::pgd(eps, 2.0 / 255.0, 10, true);
    // the default cyclic peak of 0.2 suits wide nets; this one needs less
    let fast_spec = AdvTrainSpec { lr_max: 0.05, ..AdvTrainSpec::fast(eps) };
    let free_spec = AdvTrainSpec { lr_max: 0.05, ..AdvTrainSpec::free(eps, 2) };

    let mut fast = start.clone();
    let losses = adversarial_train_fast(&mut fast, &train, &fast_spec, &opts)?;
    println!("fast: last loss {:.3}, clean {:.1}%, pgd {:.1}%", losses.last().unwrap(), evaluate(&fast, &test)?, evaluate_robustness(&fast, &test, &pgd)?);

    let mut free = start.clone();
    let losses = adversarial_train_free(&mut free, &train, &free_spec, &opts)?;
    println!("free: {} passes, last loss {:.3}, clean {:.1}%, pgd {:.1}%", losses.len(), losses.last().unwrap(), evaluate(&free, &test)?, evaluate_robustness(&free, &test, &pgd)?);
    Ok(())
}
