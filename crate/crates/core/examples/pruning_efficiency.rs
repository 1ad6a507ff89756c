//! Compares full training with noise-scored pruning at several removal
//! sizes: iterations skipped, wall time and final accuracy.

use qtart::data::{generate_synthetic, SyntheticSpec};
use qtart::trainer::{run_experiment, ExperimentConfig, Mode};

fn main() -> qtart::Result<()> {
    let spec = SyntheticSpec::small(800, 4, 6);
    let (train, test) = (generate_synthetic(&spec)?, generate_synthetic(&spec.test_split(300))?);
    println!("{:<15} {:>6} {:>8} {:>8} {:>8}", "mode", "gamma", "iters", "saved", "acc%");
    for (mode, gamma) in [(Mode::Baseline, 0), (Mode::Qtart, 80), (Mode::Qtart, 160), (Mode::Qtart, 320), (Mode::RandomRemoval, 160)] {
        let mut cfg = ExperimentConfig::default().with_seed(6);
        cfg.run.mode = mode;
        cfg.run.gamma = gamma;
        cfg.run.epochs = 12;
        cfg.eval.attacks.clear();
        let t = std::time::Instant::now();
        let r = run_experiment(&cfg, &train, &test)?;
        println!(
            "{:<15} {:>6} {:>8} {:>8} {:>8.2}   ({:.1}s)",
            mode.name(),
            gamma,
            r.total_iterations,
            r.iterations_saved_observed,
            r.final_accuracy,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
