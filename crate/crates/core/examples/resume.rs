//! Stops a run midway, checkpoints it to disk, resumes, and checks the result
//! matches an uninterrupted run bit for bit.

use qtart::data::{generate_synthetic, SyntheticSpec};
use qtart::trainer::{Checkpoint, Experiment, ExperimentConfig};

fn main() -> qtart::Result<()> {
    let spec = SyntheticSpec::small(300, 3, 4);
    let (train, test) = (generate_synthetic(&spec)?, generate_synthetic(&spec.test_split(100))?);
    let mut cfg = ExperimentConfig::default().with_seed(4);
    cfg.run.epochs = 8;
    cfg.eval.attacks.clear();
    let build = || cfg.net_spec(train.image_shape(), train.classes()).build(cfg.seeds.weights);

    let mut whole = Experiment::new(cfg.clone(), build()?, &train, &test)?;
    whole.run()?;

    let mut first = Experiment::new(cfg.clone(), build()?, &train, &test)?;
    for _ in 0..5 {
        first.step()?;
    }
    let path = std::env::temp_dir().join("qtart-resume-example.ckpt");
    first.checkpoint().save(&path)?;
    println!("saved epoch {} to {}", first.epoch(), path.display());
    let mut second = Experiment::resume(cfg, Checkpoint::load(&path)?, &train, &test)?;
    second.run()?;
    println!("resumed model identical: {}", second.model() == whole.model());
    println!("mask identical: {}", second.mask() == whole.mask());
    Ok(())
}
