use proptest::prelude::*;
use qtart::data::{generate_synthetic, Dataset, SyntheticSpec};
use qtart::loss::{cross_entropy_row, smoothed_targets};
use qtart::optim::LrSchedule;
use qtart::trainer::{
    iterations_saved, iterations_saved_observed, masked_loss, run_experiment, Checkpoint, Experiment,
    ExperimentConfig, Mode,
};
use qtart::Tensor;

fn data(seed: u64) -> (Dataset, Dataset) {
    let spec = SyntheticSpec::small(160, 3, seed);
    (generate_synthetic(&spec).unwrap(), generate_synthetic(&spec.test_split(60)).unwrap())
}

fn config(mode: Mode, gamma: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default().with_seed(4);
    c.run.mode = mode;
    c.run.epochs = 6;
    c.run.tau = 2;
    c.run.gamma = gamma;
    c.run.batch_size = 16;
    c.model.conv_channels = vec![4, 6];
    c.adv.replays = 2;
    c.eval.attacks.clear();
    c
}

fn start<'a>(cfg: &ExperimentConfig, train: &'a Dataset, test: &'a Dataset) -> Experiment<'a> {
    let model = cfg.net_spec(train.image_shape(), train.classes()).build(cfg.seeds.weights).unwrap();
    Experiment::new(cfg.clone(), model, train, test).unwrap()
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let (train, test) = data(1);
    for (mode, stop) in [(Mode::Qtart, 1), (Mode::Qtart, 4), (Mode::QtartFreeAdv, 2), (Mode::QtartFastAdv, 3)] {
        let cfg = config(mode, 16);
        let mut whole = start(&cfg, &train, &test);
        whole.run().unwrap();

        let mut first = start(&cfg, &train, &test);
        for _ in 0..stop {
            first.step().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        first.checkpoint().save(&path).unwrap();
        drop(first);
        let mut second = Experiment::resume(cfg.clone(), Checkpoint::load(&path).unwrap(), &train, &test).unwrap();
        second.run().unwrap();

        assert_eq!(second.model(), whole.model(), "{mode} stopped at {stop}");
        assert_eq!(second.mask(), whole.mask());
    }
}

#[test]
fn resume_rejects_another_config() {
    let (train, test) = data(2);
    let cfg = config(Mode::Qtart, 8);
    let run = start(&cfg, &train, &test);
    let ck = run.checkpoint();
    let mut other = cfg.clone();
    other.run.gamma = 9;
    let err = Experiment::resume(other, ck, &train, &test).err().unwrap().to_string();
    assert!(err.contains("checkpoint belongs to run"), "{err}");
}

#[test]
fn mask_freezes_at_tau_and_shrinks_later_epochs() {
    let (train, test) = data(3);
    let cfg = config(Mode::Qtart, 40);
    let mut run = start(&cfg, &train, &test);
    for e in 0..cfg.run.epochs {
        let rec = run.step().unwrap();
        let expect = if e < cfg.run.tau { 160 } else { 120 };
        assert_eq!(rec.samples, expect, "epoch {e}");
        assert_eq!(run.mask().is_some(), e >= cfg.run.tau);
    }
    assert_eq!(run.mask().unwrap().gamma(), 40);
    assert_eq!(run.instability().unwrap().len(), 160);
    assert!(run.step().is_err());
}

#[test]
fn observed_savings_match_iteration_counts() {
    let (train, test) = data(4);
    let base = run_experiment(&config(Mode::Baseline, 0), &train, &test).unwrap();
    let pruned = run_experiment(&config(Mode::Qtart, 40), &train, &test).unwrap();
    assert_eq!(base.total_iterations - pruned.total_iterations, pruned.iterations_saved_observed);
    assert_eq!(pruned.iterations_saved_observed, iterations_saved_observed(160, 40, 6, 2, 16));
    assert_eq!(pruned.iterations_saved, iterations_saved(40, 6, 2, 16).unwrap());
    assert_eq!(pruned.removed.len(), 40);
    assert!(pruned.outlier_recall.is_some());
}

#[test]
fn random_removal_is_seeded() {
    let (train, test) = data(5);
    let a = run_experiment(&config(Mode::RandomRemoval, 30), &train, &test).unwrap();
    let b = run_experiment(&config(Mode::RandomRemoval, 30), &train, &test).unwrap();
    assert_eq!(a.removed, b.removed);
    assert_eq!(a.removed.len(), 30);
    let c = run_experiment(&config(Mode::RandomRemoval, 30).with_override_strings(&["seeds.noise=99".into()]).unwrap(), &train, &test)
        .unwrap();
    assert_ne!(a.removed, c.removed);
}

#[test]
fn free_mode_runs_e_over_m_passes() {
    let (train, test) = data(6);
    let cfg = config(Mode::QtartFreeAdv, 16);
    let mut run = start(&cfg, &train, &test);
    assert_eq!(run.passes(), 3);
    assert_eq!(run.scoring_pass(), 1);
    let rec = run.step().unwrap();
    assert_eq!(rec.iterations, 2 * 10);
    let report = run.run().unwrap();
    assert_eq!(report.epochs.len(), 3);
    assert!(run.free_delta().is_some());
}

#[test]
fn label_budget_limits_removal_to_chosen_labels() {
    let (train, test) = data(7);
    let mut cfg = config(Mode::Qtart, 10);
    cfg.run.label_budget = 1;
    let report = run_experiment(&cfg, &train, &test).unwrap();
    let labels: std::collections::BTreeSet<usize> = report.removed.iter().map(|&i| train.labels()[i]).collect();
    assert_eq!(labels.len(), 1);
    assert_eq!(report.removed.len(), 10);
}

#[test]
fn gamma_too_large_is_rejected() {
    let (train, test) = data(8);
    let cfg = config(Mode::Qtart, 161);
    let model = cfg.net_spec(train.image_shape(), 3).build(0).unwrap();
    assert!(Experiment::new(cfg, model, &train, &test).is_err());
}

#[test]
fn config_files_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.cfg");
    std::fs::write(
        &p,
        "# sweep point\nqtart.mode = qtart+fast-adv\nqtart.gamma = 12   # small\nscoring.window = gaussian\n\nmodel.conv_channels = 4, 8\n",
    )
    .unwrap();
    let c = ExperimentConfig::load(&p).unwrap();
    assert_eq!(c.run.mode, Mode::QtartFastAdv);
    assert_eq!(c.run.gamma, 12);
    assert_eq!(c.model.conv_channels, vec![4, 8]);
    assert!(matches!(c.schedule(), LrSchedule::Cyclic { .. }));

    let q = dir.path().join("again.cfg");
    c.save(&q).unwrap();
    assert_eq!(ExperimentConfig::load(&q).unwrap(), c);

    let seeded = c.clone().with_seed(77);
    assert_eq!((seeded.seeds.weights, seeded.seeds.shuffle, seeded.seeds.noise), (77, 77, 77));
    for bad in ["qtart.smoothing = 1.0", "qtart.tau = 24", "nonsense", "scoring.window = sideways"] {
        assert!(ExperimentConfig::parse(bad).is_err(), "{bad}");
    }
    let e = ExperimentConfig::load(&dir.path().join("missing.cfg")).unwrap_err().to_string();
    assert!(e.contains("missing.cfg"), "{e}");
}

#[test]
fn step_schedule_continues_across_tau() {
    let s = LrSchedule::Step {
        base: 0.1,
        milestones: vec![2, 4],
        mult: 0.1,
    };
    let lrs: Vec<f64> = (0..6).map(|e| s.lr_at(e, 0, 10)).collect();
    assert_eq!(lrs[0], 0.1);
    assert!((lrs[2] - 0.01).abs() < 1e-15 && (lrs[5] - 0.001).abs() < 1e-15);
    let c = LrSchedule::Cyclic { min: 0.0, max: 0.2, epochs: 4 };
    assert_eq!(c.lr_at(0, 0, 10), 0.0);
    assert!((c.lr_at(2, 0, 10) - 0.2).abs() < 1e-12);
    assert!((c.lr_at(3, 5, 10) - 0.05).abs() < 1e-12);
}

proptest! {
    #[test]
    fn masked_loss_is_mean_over_kept_samples(
        rows in proptest::collection::vec((proptest::collection::vec(-3.0f64..3.0, 4), 0usize..4, any::<bool>()), 1..12),
        smoothing in 0.0f64..0.5,
    ) {
        prop_assume!(rows.iter().any(|r| r.2));
        let logits = Tensor::new(&[rows.len(), 4], rows.iter().flat_map(|r| r.0.clone()).collect()).unwrap();
        let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let t = smoothed_targets::<f64>(&labels, 4, smoothing).unwrap();
        let kept: Vec<usize> = (0..rows.len()).filter(|&i| mask[i]).collect();
        let want = kept.iter().map(|&i| cross_entropy_row(&rows[i].0, &t[i * 4..][..4])).sum::<f64>() / kept.len() as f64;
        let got = masked_loss(&logits, &labels, &mask, smoothing).unwrap();
        prop_assert!((got - want).abs() < 1e-10, "{} vs {}", got, want);
    }
}
