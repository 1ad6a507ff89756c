use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, iterations_saved, iterations_saved_observed, train_epoch, Checkpoint, ExperimentConfig, Mode, Regime};
use crate::adversarial::{AdvRegime, FastAdv, FreeAdv, RobustnessReport};
use crate::data::{apply_mask, batches, Dataset, Mask, NormalizationStats};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::optim::{LrSchedule, OptimizerState};
use crate::scoring::{score_dataset, two_phase_score, InstabilityMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub iterations: usize,
    pub samples: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub fingerprint: String,
    pub epochs: Vec<EpochRecord>,
    pub final_accuracy: f64,
    pub total_iterations: usize,
    /// Closed form `γ (E − τ) / batch`.
    pub iterations_saved: f64,
    /// Steps actually skipped relative to full-data epochs.
    pub iterations_saved_observed: usize,
    pub wall_seconds: f64,
    pub scoring_seconds: f64,
    /// Removed samples, as indices into the training set.
    pub removed: Vec<usize>,
    /// Fraction of planted outliers among the removed samples' targets, when known.
    pub outlier_recall: Option<f64>,
    pub robustness: Option<RobustnessReport>,
}

impl TrainReport {
    pub fn summary(&self) -> String {
        let mut s = format!("run {} ({})\n", self.fingerprint, self.mode);
        writeln!(s, "{:>5} {:>10} {:>8} {:>6} {:>8}", "epoch", "loss", "acc%", "iters", "sec").expect("write");
        for e in &self.epochs {
            let acc = e.test_accuracy.map_or("-".to_string(), |a| format!("{a:.2}"));
            writeln!(s, "{:>5} {:>10.4} {:>8} {:>6} {:>8.3}", e.epoch, e.train_loss, acc, e.iterations, e.seconds)
                .expect("write");
        }
        writeln!(s, "final accuracy   {:.2}%", self.final_accuracy).expect("write");
        writeln!(
            s,
            "iterations       {} (saved {:.2} closed form, {} observed)",
            self.total_iterations, self.iterations_saved, self.iterations_saved_observed
        )
        .expect("write");
        writeln!(s, "removed          {}", self.removed.len()).expect("write");
        if let Some(r) = self.outlier_recall {
            writeln!(s, "outlier recall   {:.1}%", 100.0 * r).expect("write");
        }
        writeln!(s, "wall time        {:.2}s (scoring {:.2}s)", self.wall_seconds, self.scoring_seconds).expect("write");
        if let Some(rob) = &self.robustness {
            s.push_str(&rob.table());
        }
        s
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A run in progress. Epochs are 0-based: epochs `0..τ` see every sample, the
/// mask is frozen at the start of epoch `τ`, and the rest train on the
/// retained subset. Free adversarial training counts passes, `E/m` of them
/// with the mask frozen at pass `τ/m`.
#[derive(Debug)]
pub struct Experiment<'a> {
    cfg: ExperimentConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    model: Model,
    opt: OptimizerState,
    schedule: LrSchedule,
    regime: Regime,
    epoch: usize,
    mask: Option<Mask>,
    active: Option<Dataset>,
    instability: Option<InstabilityMatrix>,
    records: Vec<EpochRecord>,
    scoring_seconds: f64,
}

impl<'a> Experiment<'a> {
    /// Starts a run. A model without input normalization gets the training
    /// set's per-channel statistics.
    pub fn new(cfg: ExperimentConfig, mut model: Model, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if model.input_norm().is_none() {
            model.set_input_norm(Some(NormalizationStats::compute(train)))?;
        }
        let opt = OptimizerState::new(cfg.optim.lr, cfg.optim.momentum, cfg.optim.weight_decay)?;
        Self::assemble(cfg, model, opt, 0, None, None, train, test)
    }

    /// Continues from a checkpoint written by [`Experiment::checkpoint`].
    pub fn resume(cfg: ExperimentConfig, ck: Checkpoint, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if !ck.fingerprint.is_empty() && ck.fingerprint != cfg.fingerprint() {
            return Err(Error::Config(format!(
                "checkpoint belongs to run {}, config is {}",
                ck.fingerprint,
                cfg.fingerprint()
            )));
        }
        let opt = match ck.optimizer {
            Some(o) => o,
            None => OptimizerState::new(cfg.optim.lr, cfg.optim.momentum, cfg.optim.weight_decay)?,
        };
        Self::assemble(cfg, ck.model, opt, ck.epoch, ck.mask, ck.delta, train, test)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: ExperimentConfig,
        model: Model,
        opt: OptimizerState,
        epoch: usize,
        mask: Option<Mask>,
        delta: Option<crate::tensor::Tensor>,
        train: &'a Dataset,
        test: &'a Dataset,
    ) -> Result<Self> {
        if cfg.run.gamma > train.len() {
            return Err(Error::Config(format!(
                "qtart.gamma ({}) exceeds the {} training samples",
                cfg.run.gamma,
                train.len()
            )));
        }
        if train.image_shape() != model.input_shape() || train.classes() != model.classes() {
            return Err(Error::shape("training set vs model", &model.input_shape(), &train.image_shape()));
        }
        let regime = match cfg.run.mode.adversarial() {
            None => Regime::Standard,
            Some(AdvRegime::FastSingleStep) => Regime::Fast(FastAdv::new(cfg.adv_spec())?),
            Some(AdvRegime::FreeReplay) => {
                let mut free = FreeAdv::new(cfg.adv_spec())?;
                free.set_delta(delta);
                Regime::Free(free)
            }
        };
        let active = match &mask {
            Some(m) => Some(apply_mask(train, m)?),
            None => None,
        };
        Ok(Self {
            schedule: cfg.schedule(),
            cfg,
            train,
            test,
            model,
            opt,
            regime,
            epoch,
            mask,
            active,
            instability: None,
            records: Vec::new(),
            scoring_seconds: 0.0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    /// Next epoch (pass) to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    pub fn instability(&self) -> Option<&InstabilityMatrix> {
        self.instability.as_ref()
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    /// The samples currently trained on.
    pub fn active(&self) -> &Dataset {
        self.active.as_ref().unwrap_or(self.train)
    }

    pub fn free_delta(&self) -> Option<&crate::tensor::Tensor> {
        match &self.regime {
            Regime::Free(f) => f.delta(),
            _ => None,
        }
    }

    fn replays(&self) -> usize {
        match self.cfg.run.mode.adversarial() {
            Some(AdvRegime::FreeReplay) => self.cfg.adv.replays.max(1),
            _ => 1,
        }
    }

    /// Total passes over the data.
    pub fn passes(&self) -> usize {
        (self.cfg.run.epochs / self.replays()).max(1)
    }

    /// Pass at which the mask is frozen.
    pub fn scoring_pass(&self) -> usize {
        self.cfg.run.tau / self.replays()
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.passes()
    }

    fn freeze_mask(&mut self) -> Result<()> {
        let cfg = &self.cfg;
        let (n, gamma, source) = (self.train.len(), cfg.run.gamma, cfg.seeds.noise);
        let start = Instant::now();
        let mask = match cfg.run.mode {
            Mode::Baseline => Mask::all_kept(n, source),
            _ if gamma == 0 => Mask::all_kept(n, source),
            Mode::RandomRemoval => {
                let mut rng = ChaCha8Rng::seed_from_u64(source);
                rng.set_stream(u64::MAX);
                let removed = rand::seq::index::sample(&mut rng, n, gamma).into_vec();
                Mask::from_removed(n, &removed, source)?
            }
            _ if cfg.run.label_budget > 0 => {
                two_phase_score(&self.model, self.train, cfg.run.label_budget, gamma, &cfg.scoring_config())?.mask
            }
            _ => {
                let inst = score_dataset(&self.model, self.train, &cfg.scoring_config())?;
                let mask = inst.mask(gamma, source)?;
                self.instability = Some(inst);
                mask
            }
        };
        self.scoring_seconds += start.elapsed().as_secs_f64();
        self.active = Some(apply_mask(self.train, &mask)?);
        self.mask = Some(mask);
        Ok(())
    }

    /// Runs one epoch (pass), freezing the mask first when it is due.
    pub fn step(&mut self) -> Result<EpochRecord> {
        if self.is_done() {
            return Err(Error::invalid("run already finished"));
        }
        if self.epoch >= self.scoring_pass() && self.mask.is_none() {
            self.freeze_mask()?;
        }
        let start = Instant::now();
        let data = self.active.as_ref().unwrap_or(self.train);
        let order = batches(data, self.cfg.run.batch_size, self.cfg.seeds.shuffle, self.epoch)?;
        let stats = train_epoch(
            &mut self.model,
            &mut self.opt,
            data,
            &order,
            &self.schedule,
            self.epoch,
            self.cfg.run.smoothing,
            &mut self.regime,
        )?;
        let seconds = start.elapsed().as_secs_f64();
        let every = self.cfg.run.eval_every;
        let last = self.epoch + 1 == self.passes();
        let test_accuracy = if last || (every > 0 && (self.epoch + 1) % every == 0) {
            Some(evaluate(&self.model, self.test)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: stats.mean_loss,
            test_accuracy,
            iterations: stats.iterations,
            samples: stats.samples,
            seconds,
        };
        self.records.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.opt.clone()),
            epoch: self.epoch,
            mask: self.mask.clone(),
            delta: self.free_delta().cloned(),
            fingerprint: self.cfg.fingerprint(),
        }
    }

    /// Runs the remaining epochs and evaluates the configured attacks.
    pub fn run(&mut self) -> Result<TrainReport> {
        let start = Instant::now();
        while !self.is_done() {
            self.step()?;
        }
        let wall_seconds = start.elapsed().as_secs_f64();
        self.report(wall_seconds)
    }

    /// Final report for a run that took `wall_seconds`.
    pub fn report(&self, wall_seconds: f64) -> Result<TrainReport> {
        let cfg = &self.cfg;
        let removed = self.mask.as_ref().map(Mask::removed).unwrap_or_default();
        let gamma = removed.len();
        let outlier_recall = self
            .train
            .outliers()
            .filter(|o| !o.is_empty())
            .map(|o| removed.iter().filter(|i| o.binary_search(i).is_ok()).count() as f64 / o.len() as f64);
        let final_accuracy = match self.records.last().and_then(|r| r.test_accuracy) {
            Some(a) => a,
            None => evaluate(&self.model, self.test)?,
        };
        let specs = cfg.attack_specs();
        let robustness = if specs.is_empty() {
            None
        } else {
            Some(RobustnessReport::evaluate(cfg.run.mode.name(), &self.model, self.test, &specs)?)
        };
        let (passes, tau) = (self.passes(), self.scoring_pass());
        Ok(TrainReport {
            mode: cfg.run.mode,
            fingerprint: cfg.fingerprint(),
            epochs: self.records.clone(),
            final_accuracy,
            total_iterations: self.records.iter().map(|r| r.iterations).sum(),
            iterations_saved: iterations_saved(gamma, cfg.run.epochs, cfg.run.tau, cfg.run.batch_size)?,
            iterations_saved_observed: iterations_saved_observed(self.train.len(), gamma, passes, tau, cfg.run.batch_size)
                * self.replays(),
            wall_seconds,
            scoring_seconds: self.scoring_seconds,
            removed,
            outlier_recall,
            robustness,
        })
    }
}

/// Builds a fresh model from the config and runs the whole protocol.
pub fn run_experiment(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<TrainReport> {
    let model = cfg.net_spec(train.image_shape(), train.classes()).build(cfg.seeds.weights)?;
    Experiment::new(cfg.clone(), model, train, test)?.run()
}
