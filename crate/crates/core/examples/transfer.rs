//! Crafts attacks on several source models and measures them on one target.

use qtart::adversarial::{transfer_eval, AttackSpec};
use qtart::data::{generate_synthetic, SyntheticSpec};
use qtart::trainer::{Experiment, ExperimentConfig, Mode};

fn main() -> qtart::Result<()> {
    let spec = SyntheticSpec::small(400, 4, 1);
    let (train, test) = (generate_synthetic(&spec)?, generate_synthetic(&spec.test_split(200))?);
    let mut models = Vec::new();
    for (name, mode) in [("baseline", Mode::Baseline), ("qtart", Mode::Qtart), ("random", Mode::RandomRemoval)] {
        let mut cfg = ExperimentConfig::default().with_seed(1);
        cfg.run.mode = mode;
        cfg.run.epochs = 8;
        cfg.run.gamma = 40;
        cfg.eval.attacks.clear();
        let model = cfg.net_spec(train.image_shape(), train.classes()).build(cfg.seeds.weights)?;
        let mut run = Experiment::new(cfg, model, &train, &test)?;
        run.run()?;
        models.push((name, run.model().clone()));
    }
    let sources: Vec<(&str, &qtart::nn::Model)> = models.iter().map(|(n, m)| (*n, m)).collect();
    let eps = 8.0 / 255.0;
    for spec in [AttackSpec::fgsm(eps), AttackSpec::pgd(eps, eps / 4.0, 10, true)] {
        println!("{}", transfer_eval(sources[1], &sources, &test, &spec)?.table());
    }
    Ok(())
}
