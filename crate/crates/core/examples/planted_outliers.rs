//! Scores a synthetic set with planted noisy samples and reports how many the
//! removal mask catches, next to an input-space oracle that knows the templates.

use qtart::data::{generate_synthetic, SyntheticSpec};
use qtart::scoring::top_gamma;
use qtart::trainer::{ExperimentConfig, Experiment};

fn main() -> qtart::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0, 1, 2, 3, 4] } else { seeds };
    for seed in seeds {
        let mut cfg = ExperimentConfig::default().with_seed(seed);
        cfg.run.epochs = 11;
        cfg.run.tau = 10;
        cfg.run.gamma = 50;
        cfg.eval.attacks.clear();
        let spec = SyntheticSpec {
            outliers: 50,
            ..SyntheticSpec::small(1000, 4, seed)
        };
        let train = generate_synthetic(&spec)?;
        let test = generate_synthetic(&spec.test_split(400))?;

        let model = cfg.net_spec(train.image_shape(), train.classes()).build(seed)?;
        let mut run = Experiment::new(cfg, model, &train, &test)?;
        while run.mask().is_none() {
            run.step()?;
        }
        let outliers = train.outliers().unwrap_or(&[]);
        let hit = |removed: &[usize]| removed.iter().filter(|i| outliers.binary_search(i).is_ok()).count();
        let removed = run.mask().expect("frozen").removed();

        // Oracle: squared distance of each image from its class template.
        let templates = spec.templates();
        let energy: Vec<f64> = (0..train.len())
            .map(|i| {
                let t = &templates[train.labels()[i]];
                let x = train.images().row(i);
                x.iter().zip(t).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum()
            })
            .collect();
        let oracle = top_gamma(&energy, 50)?;
        println!(
            "seed {seed}: mask recovers {}/{} planted outliers, oracle {}/{}, test acc {:.1}%",
            hit(&removed),
            outliers.len(),
            hit(&oracle),
            outliers.len(),
            run.records().last().and_then(|r| r.test_accuracy).unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
