use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adversarial::{AdvRegime, AdvTrainSpec, AttackKind, AttackSpec};
use crate::container::digest_hex;
use crate::data::{self, Dataset, ImageFormat, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::ConvNetSpec;
use crate::optim::LrSchedule;
use crate::scoring::{ImportanceMetric, NoiseConfig, ProjectionConfig, ProjectionMethod, ScoringConfig, WindowFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "random-removal")]
    RandomRemoval,
    #[serde(rename = "qtart")]
    Qtart,
    #[serde(rename = "qtart+fast-adv")]
    QtartFastAdv,
    #[serde(rename = "qtart+free-adv")]
    QtartFreeAdv,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Baseline,
        Mode::RandomRemoval,
        Mode::Qtart,
        Mode::QtartFastAdv,
        Mode::QtartFreeAdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::RandomRemoval => "random-removal",
            Mode::Qtart => "qtart",
            Mode::QtartFastAdv => "qtart+fast-adv",
            Mode::QtartFreeAdv => "qtart+free-adv",
        }
    }

    /// Whether the mask comes from instability scoring.
    pub fn scores(self) -> bool {
        matches!(self, Mode::Qtart | Mode::QtartFastAdv | Mode::QtartFreeAdv)
    }

    pub fn adversarial(self) -> Option<AdvRegime> {
        match self {
            Mode::QtartFastAdv => Some(AdvRegime::FastSingleStep),
            Mode::QtartFreeAdv => Some(AdvRegime::FreeReplay),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    /// `E`, total epochs.
    pub epochs: usize,
    /// `τ`, the scoring epoch. Desk-scale runs use roughly `E/6`.
    pub tau: usize,
    /// `γ`, samples removed at `τ`.
    pub gamma: usize,
    pub batch_size: usize,
    /// Label-smoothing `ε`.
    pub smoothing: f64,
    /// Two-phase scoring restricted to this many labels; 0 disables it.
    pub label_budget: usize,
    /// Evaluate test accuracy every this many epochs (the final epoch always); 0 only at the end.
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub weights: u64,
    pub shuffle: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    /// Hidden dense width; 0 for none.
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    Step,
    Cyclic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    /// Base (step/constant) or peak (cyclic) learning rate.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub milestones: Vec<usize>,
    pub lr_mult: f64,
    /// Cyclic floor.
    pub lr_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringSection {
    pub sigma: f64,
    pub proj_dim: usize,
    pub proj_method: ProjectionMethod,
    pub proj_seed: u64,
    /// Kept filters per tapped layer (empty: all; one value: every layer).
    pub filters: Vec<usize>,
    pub metric: ImportanceMetric,
    pub window: WindowFunction,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvSection {
    pub epsilon: f32,
    pub alpha: f32,
    pub replays: usize,
    pub lr_min: f64,
    pub lr_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training file; empty generates the synthetic set below.
    pub train: String,
    pub test: String,
    /// `qtds`, `cifar`, or `idx` (with the `*_labels` files).
    pub format: String,
    pub train_labels: String,
    pub test_labels: String,
    pub synth_n: usize,
    pub synth_test_n: usize,
    pub synth_classes: usize,
    pub synth_channels: usize,
    pub synth_size: usize,
    pub synth_outliers: usize,
    pub synth_sigma: f64,
    pub synth_jitter: f64,
    pub synth_contrast: f64,
    pub synth_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Attacks run on the final model.
    pub attacks: Vec<AttackKind>,
    /// Overrides every attack's ε when positive.
    pub epsilon: f32,
    pub seed: u64,
}

/// The full recipe for one reproducible run.
///
/// On disk it is plain text, one `section.key = value` per line; `#` starts a
/// comment. Lists are written `a, b, c` (or JSON), strings unquoted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "qtart")]
    pub run: RunSection,
    pub seeds: Seeds,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub scoring: ScoringSection,
    pub adv: AdvSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunSection {
                mode: Mode::Qtart,
                epochs: 24,
                tau: 4,
                gamma: 50,
                batch_size: 32,
                smoothing: 0.1,
                label_budget: 0,
                eval_every: 1,
            },
            seeds: Seeds {
                weights: 0,
                shuffle: 0,
                noise: 0,
            },
            model: ModelSection {
                conv_channels: vec![8, 16],
                kernel: 3,
                pool: 2,
                hidden: 0,
            },
            optim: OptimSection {
                lr: 0.05,
                momentum: 0.9,
                weight_decay: 5e-4,
                schedule: ScheduleKind::Step,
                milestones: vec![16, 21],
                lr_mult: 0.1,
                lr_min: 0.0,
            },
            scoring: ScoringSection {
                sigma: 0.5,
                proj_dim: 4,
                proj_method: ProjectionMethod::AveragePool,
                proj_seed: 0,
                filters: Vec::new(),
                metric: ImportanceMetric::WeightL1Norm,
                window: WindowFunction::LastLayer,
                batch_size: 256,
            },
            adv: AdvSection {
                epsilon: 8.0 / 255.0,
                alpha: 10.0 / 255.0,
                replays: 4,
                lr_min: 0.0,
                lr_max: 0.1,
            },
            data: DataSection {
                train: String::new(),
                test: String::new(),
                format: "qtds".into(),
                train_labels: String::new(),
                test_labels: String::new(),
                synth_n: 1000,
                synth_test_n: 400,
                synth_classes: 4,
                synth_channels: 3,
                synth_size: 8,
                synth_outliers: 50,
                synth_sigma: 0.5,
                synth_jitter: 0.05,
                synth_contrast: 0.25,
                synth_seed: 0,
            },
            eval: EvalSection {
                attacks: vec![AttackKind::Fgsm, AttackKind::Pgd],
                epsilon: 0.0,
                seed: 0,
            },
        }
    }
}

fn leaf_to_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(leaf_to_text).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf_to_text(leaf))),
    }
}

/// Reads `raw` in the shape of the value it replaces.
fn parse_like(existing: &Value, raw: &str, key: &str) -> Result<Value> {
    let raw = raw.trim();
    let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {raw:?}"));
    Ok(match existing {
        Value::String(_) => Value::String(raw.trim_matches('"').to_string()),
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw)
            .map(Value::Number)
            .map_err(|_| bad("a number"))?,
        Value::Array(items) => {
            if raw.starts_with('[') {
                serde_json::from_str(raw).map_err(|_| bad("a list"))?
            } else {
                let elem = items.first().cloned().unwrap_or(Value::Number(0.into()));
                let parts = raw.split(',').map(str::trim).filter(|p| !p.is_empty());
                Value::Array(parts.map(|p| parse_like(&elem, p, key)).collect::<Result<_>>()?)
            }
        }
        Value::Null | Value::Object(_) => serde_json::from_str(raw).map_err(|_| bad("a JSON value"))?,
    })
}

impl ExperimentConfig {
    /// Parses `section.key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = text
            .lines()
            .enumerate()
            .filter_map(|(n, line)| {
                let line = line.split('#').next().unwrap_or("").trim();
                (!line.is_empty()).then_some((n + 1, line))
            })
            .map(|(n, line)| {
                line.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("line {n}: expected `section.key = value`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::default().with_overrides(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut pairs = Vec::new();
        flatten("", &v, &mut pairs);
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies dotted-key overrides; every key must already exist.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for (key, raw) in pairs {
            let slot = key
                .split('.')
                .try_fold(&mut v, |node, part| node.get_mut(part))
                .filter(|s| !s.is_object())
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            *slot = parse_like(slot, raw, key)?;
        }
        // value parsers already report config errors; don't prefix them twice
        let cfg: Self = serde_json::from_value(v)
            .map_err(|e| Error::Config(e.to_string().trim_start_matches("config error: ").to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key=value` override strings.
    pub fn with_override_strings(&self, overrides: &[String]) -> Result<Self> {
        let pairs = overrides
            .iter()
            .map(|o| {
                o.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_overrides(&pairs)
    }

    /// Sets every seed to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds {
            weights: seed,
            shuffle: seed,
            noise: seed,
        };
        self.data.synth_seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.tau >= r.epochs {
            return Err(Error::Config(format!("qtart.tau ({}) must be below qtart.epochs ({})", r.tau, r.epochs)));
        }
        if r.batch_size == 0 || self.scoring.batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&r.smoothing) {
            return Err(Error::Config(format!("qtart.smoothing must be in [0, 1), got {}", r.smoothing)));
        }
        if self.scoring.sigma <= 0.0 {
            return Err(Error::Config("scoring.sigma must be positive".into()));
        }
        if self.model.conv_channels.is_empty() {
            return Err(Error::Config("model.conv_channels needs at least one block".into()));
        }
        if !(self.optim.lr > 0.0) {
            return Err(Error::Config("optim.lr must be positive".into()));
        }
        if r.mode.adversarial().is_some() {
            self.adv_spec().validate()?;
        }
        Ok(())
    }

    /// Content hash naming every artifact of the run.
    pub fn fingerprint(&self) -> String {
        digest_hex(&[&serde_json::to_vec(self).expect("config serializes")])
    }

    pub fn schedule(&self) -> LrSchedule {
        if self.run.mode.adversarial().is_some() {
            let spec = self.adv_spec();
            return spec.schedule(spec.passes(self.run.epochs));
        }
        let o = &self.optim;
        match o.schedule {
            ScheduleKind::Constant => LrSchedule::Constant { lr: o.lr },
            ScheduleKind::Step => LrSchedule::Step {
                base: o.lr,
                milestones: o.milestones.clone(),
                mult: o.lr_mult,
            },
            ScheduleKind::Cyclic => LrSchedule::Cyclic {
                min: o.lr_min,
                max: o.lr,
                epochs: self.run.epochs,
            },
        }
    }

    fn adv_spec_for(&self, regime: AdvRegime) -> AdvTrainSpec {
        let a = &self.adv;
        AdvTrainSpec {
            regime,
            epsilon: a.epsilon,
            alpha: a.alpha,
            replays: a.replays,
            lr_min: a.lr_min,
            lr_max: a.lr_max,
            seed: self.seeds.shuffle,
        }
    }

    /// Adversarial-training spec for the configured mode (fast when not adversarial).
    pub fn adv_spec(&self) -> AdvTrainSpec {
        self.adv_spec_for(self.run.mode.adversarial().unwrap_or(AdvRegime::FastSingleStep))
    }

    pub fn scoring_config(&self) -> ScoringConfig {
        let s = &self.scoring;
        ScoringConfig {
            noise: NoiseConfig {
                sigma: s.sigma,
                seed: self.seeds.noise,
            },
            projection: ProjectionConfig {
                dim: s.proj_dim,
                method: s.proj_method,
                seed: s.proj_seed,
            },
            filters: s.filters.clone(),
            metric: s.metric,
            window: s.window.clone(),
            batch_size: s.batch_size,
        }
    }

    pub fn net_spec(&self, input_shape: [usize; 3], classes: usize) -> ConvNetSpec {
        ConvNetSpec {
            input_shape,
            classes,
            conv_channels: self.model.conv_channels.clone(),
            kernel: self.model.kernel,
            pool: self.model.pool,
            hidden: (self.model.hidden > 0).then_some(self.model.hidden),
        }
    }

    pub fn attack_specs(&self) -> Vec<AttackSpec> {
        self.eval
            .attacks
            .iter()
            .map(|&k| {
                let mut s = AttackSpec::default_for(k).with_seed(self.eval.seed);
                if self.eval.epsilon > 0.0 {
                    let scale = self.eval.epsilon / s.epsilon;
                    s.epsilon = self.eval.epsilon;
                    s.alpha *= scale;
                }
                s
            })
            .collect()
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let d = &self.data;
        SyntheticSpec {
            n: d.synth_n,
            classes: d.synth_classes,
            channels: d.synth_channels,
            height: d.synth_size,
            width: d.synth_size,
            outliers: d.synth_outliers,
            outlier_sigma: d.synth_sigma,
            jitter: d.synth_jitter,
            contrast: d.synth_contrast,
            seed: d.synth_seed,
            stream: 0,
        }
    }

    /// Training and test sets: from files when `data.train` is set, otherwise synthetic.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        if d.train.is_empty() {
            let spec = self.synthetic_spec();
            let train = data::generate_synthetic(&spec)?;
            let test = data::generate_synthetic(&spec.test_split(d.synth_test_n))?;
            return Ok((train, test));
        }
        if d.test.is_empty() {
            return Err(Error::Config("data.test is required with data.train".into()));
        }
        let load = |path: &str, labels: &str| -> Result<Dataset> {
            let path = PathBuf::from(path);
            match d.format.as_str() {
                "qtds" => data::load_dataset(&path),
                "cifar" => data::load_image_dataset(&path, &ImageFormat::CifarBinary),
                "idx" => data::load_image_dataset(
                    &path,
                    &ImageFormat::IdxPair {
                        labels: PathBuf::from(labels),
                    },
                ),
                other => Err(Error::Config(format!("unknown data.format {other:?}"))),
            }
        };
        Ok((load(&d.train, &d.train_labels)?, load(&d.test, &d.test_labels)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.scoring.window = WindowFunction::Custom(vec![0.25, 0.75]);
        c.run.mode = Mode::QtartFreeAdv;
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = ExperimentConfig::parse("qtart.gamma = 7\nmodel.conv_channels = 4, 6 # two blocks\n").unwrap();
        assert_eq!(c.run.gamma, 7);
        assert_eq!(c.model.conv_channels, vec![4, 6]);
        let c = c.with_override_strings(&["qtart.gamma=50".into(), "qtart.mode=random-removal".into()]).unwrap();
        assert_eq!((c.run.gamma, c.run.mode), (50, Mode::RandomRemoval));
        assert!(c.with_override_strings(&["qtart.gama=1".into()]).is_err());
        assert!(c.with_override_strings(&["run=1".into()]).is_err());
        assert!(c.with_override_strings(&["qtart.mode=nope".into()]).is_err());
        assert!(ExperimentConfig::parse("qtart.tau = 30").is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::default();
        let b = a.with_override_strings(&["seeds.noise=3".into()]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
