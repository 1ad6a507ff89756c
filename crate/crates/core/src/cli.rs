//! Command-line front end: `synth-gen`, `train`, `score`, `attack`,
//! `transfer`, `report`.
//!
//! Every artifact is named by a fingerprint of the inputs that produced it, so
//! re-running a command overwrites its previous output instead of piling up
//! copies. Failures print a single `error[kind]: message` line on stderr.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adversarial::{mean_std, polar_data, transfer_eval, RobustnessReport, TransferMatrix};
use crate::container::digest_hex;
use crate::data::{self, NormalizationStats};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scoring::{score_dataset, two_phase_score};
use crate::trainer::{Checkpoint, Experiment, ExperimentConfig, TrainReport};

/// Default output directory when neither `--out` nor `QTART_OUT` is given.
pub const DEFAULT_OUT: &str = "qtart-out";

#[derive(Debug, Parser)]
#[command(name = "qtart", version, about = "Noise-sensitivity data pruning and robustness evaluation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (`section.key = value` lines); defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set qtart.gamma=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Artifact directory [default: qtart-out].
    #[arg(long, global = true, env = "QTART_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output; errors still go to stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Write the configured synthetic train/test sets.
    SynthGen,
    /// Run the full protocol; writes checkpoint, mask, scores and a result record.
    Train {
        /// Continue from this config's checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Also checkpoint every N epochs (0 = only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Score the training set with a trained model and write ξ and the mask.
    Score {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Evaluate the configured attacks against a trained model.
    Attack {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Method label used in tables (defaults to the configured mode).
        #[arg(long)]
        method: Option<String>,
    },
    /// Attack a target with adversaries crafted on each source model.
    Transfer {
        #[arg(long, value_name = "NAME=PATH")]
        target: String,
        #[arg(long = "source", value_name = "NAME=PATH", required = true)]
        sources: Vec<String>,
    },
    /// Summarize every result record in a directory.
    Report {
        /// Directory of `*.result.json` files (defaults to the output directory).
        #[arg(long, value_name = "DIR")]
        results: Option<PathBuf>,
    },
}

/// What a `*.result.json` file holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResultRecord {
    Train(TrainReport),
    Attack {
        fingerprint: String,
        report: RobustnessReport,
    },
    Transfer {
        fingerprint: String,
        matrices: Vec<TransferMatrix>,
    },
}

impl ResultRecord {
    pub fn fingerprint(&self) -> &str {
        match self {
            ResultRecord::Train(r) => &r.fingerprint,
            ResultRecord::Attack { fingerprint, .. } | ResultRecord::Transfer { fingerprint, .. } => fingerprint,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ResultRecord::Train(_) => "train",
            ResultRecord::Attack { .. } => "attack",
            ResultRecord::Transfer { .. } => "transfer",
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Result-record file name for a fingerprint.
pub fn result_path(dir: &Path, fingerprint: &str) -> PathBuf {
    dir.join(format!("{fingerprint}.result.json"))
}

/// Runs one command line (including the program name) and returns the exit
/// status.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// `error[kind]: message` on one line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error[{}]: {msg}", e.kind())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    let cfg = cfg.with_override_strings(&c.set)?;
    cfg.validate()?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let say = |s: &str| {
        if !c.quiet {
            println!("{s}");
        }
    };
    match &cli.verb {
        Verb::SynthGen => synth_gen(&cfg, &out, &say),
        Verb::Train {
            resume,
            checkpoint_every,
        } => train(&cfg, &out, *resume, *checkpoint_every, &say),
        Verb::Score { checkpoint } => score(&cfg, &out, checkpoint, &say),
        Verb::Attack { checkpoint, method } => attack(&cfg, &out, checkpoint, method.as_deref(), &say),
        Verb::Transfer { target, sources } => transfer(&cfg, &out, target, sources, &say),
        Verb::Report { results } => {
            let dir = results.clone().unwrap_or_else(|| out.clone());
            let rep = emit_report(&dir, &out)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            say(&rep.text);
            Ok(())
        }
    }
}

fn synth_gen(cfg: &ExperimentConfig, out: &Path, say: &dyn Fn(&str)) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let fp = cfg.fingerprint();
    let paths = [out.join(format!("{fp}.train.qtds")), out.join(format!("{fp}.test.qtds"))];
    for (d, p) in [&train, &test].into_iter().zip(&paths) {
        data::save_dataset(d, p)?;
        data::load_dataset(p)?;
    }
    cfg.save(&out.join(format!("{fp}.cfg")))?;
    say(&format!(
        "wrote {} ({} samples) and {} ({} samples)",
        paths[0].display(),
        train.len(),
        paths[1].display(),
        test.len()
    ));
    Ok(())
}

fn train(cfg: &ExperimentConfig, out: &Path, resume: bool, every: usize, say: &dyn Fn(&str)) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let fp = cfg.fingerprint();
    let ck_path = out.join(format!("{fp}.ckpt"));
    let mut run = if resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        say(&format!("resuming {fp} at epoch {}", ck.epoch));
        Experiment::resume(cfg.clone(), ck, &train, &test)?
    } else {
        let model = cfg.net_spec(train.image_shape(), train.classes()).build(cfg.seeds.weights)?;
        Experiment::new(cfg.clone(), model, &train, &test)?
    };
    cfg.save(&out.join(format!("{fp}.cfg")))?;
    let start = std::time::Instant::now();
    while !run.is_done() {
        let rec = run.step()?;
        let acc = rec.test_accuracy.map_or(String::new(), |a| format!(" acc {a:.2}%"));
        say(&format!("epoch {:>3} loss {:.4}{acc}", rec.epoch, rec.train_loss));
        if every > 0 && run.epoch() % every == 0 {
            run.checkpoint().save(&ck_path)?;
        }
    }
    let report = run.report(start.elapsed().as_secs_f64())?;
    run.checkpoint().save(&ck_path)?;
    Checkpoint::load(&ck_path)?;
    if let Some(mask) = run.mask() {
        let p = out.join(format!("{fp}.mask"));
        mask.save(&p)?;
        data::Mask::load(&p)?;
    }
    if let Some(inst) = run.instability() {
        inst.save_dump(&out.join(format!("{fp}.xi.txt")))?;
    }
    let record = ResultRecord::Train(report.clone());
    let rp = result_path(out, &fp);
    record.save(&rp)?;
    ResultRecord::load(&rp)?;
    say(&report.summary());
    Ok(())
}

fn load_model(path: &Path, train: Option<&data::Dataset>) -> Result<(Model, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut model = Checkpoint::from_bytes(&bytes)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .model;
    if model.input_norm().is_none() {
        if let Some(t) = train {
            model.set_input_norm(Some(NormalizationStats::compute(t)))?;
        }
    }
    Ok((model, bytes))
}

fn score(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path, say: &dyn Fn(&str)) -> Result<()> {
    let (train, _) = cfg.load_data()?;
    let (model, bytes) = load_model(checkpoint, Some(&train))?;
    let fp = digest_hex(&[cfg.fingerprint().as_bytes(), &bytes, b"score"]);
    let sc = cfg.scoring_config();
    let (gamma, source) = (cfg.run.gamma, cfg.seeds.noise);
    let mask = if cfg.run.label_budget > 0 {
        let tp = two_phase_score(&model, &train, cfg.run.label_budget, gamma, &sc)?;
        say(&format!("scoring pool: labels {:?}, {} samples", tp.labels, tp.pool.len()));
        tp.mask
    } else {
        let inst = score_dataset(&model, &train, &sc)?;
        inst.save_dump(&out.join(format!("{fp}.xi.txt")))?;
        inst.mask(gamma, source)?
    };
    let p = out.join(format!("{fp}.mask"));
    mask.save(&p)?;
    data::Mask::load(&p)?;
    say(&format!("removed {} of {} samples -> {}", mask.gamma(), mask.len(), p.display()));
    if let Some(o) = train.outliers().filter(|o| !o.is_empty()) {
        let hit = mask.removed().iter().filter(|i| o.binary_search(i).is_ok()).count();
        say(&format!("planted outliers removed: {hit}/{}", o.len()));
    }
    Ok(())
}

fn attack(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    method: Option<&str>,
    say: &dyn Fn(&str),
) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let (model, bytes) = load_model(checkpoint, Some(&train))?;
    let specs = cfg.attack_specs();
    if specs.is_empty() {
        return Err(Error::Config("eval.attacks is empty".into()));
    }
    let fp = digest_hex(&[cfg.fingerprint().as_bytes(), &bytes, b"attack"]);
    let report = RobustnessReport::evaluate(method.unwrap_or(cfg.run.mode.name()), &model, &test, &specs)?;
    let rp = result_path(out, &fp);
    ResultRecord::Attack {
        fingerprint: fp.clone(),
        report: report.clone(),
    }
    .save(&rp)?;
    ResultRecord::load(&rp)?;
    say(&report.table());
    Ok(())
}

fn named_path(arg: &str) -> Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(Error::invalid(format!("expected NAME=PATH, got {arg:?}"))),
    }
}

fn transfer(cfg: &ExperimentConfig, out: &Path, target: &str, sources: &[String], say: &dyn Fn(&str)) -> Result<()> {
    let (train, test) = cfg.load_data()?;
    let (tname, tpath) = named_path(target)?;
    let (tmodel, tbytes) = load_model(&tpath, Some(&train))?;
    let mut parts: Vec<Vec<u8>> = vec![cfg.fingerprint().into_bytes(), tname.clone().into_bytes(), tbytes];
    let mut models = Vec::new();
    for s in sources {
        let (name, path) = named_path(s)?;
        let (m, bytes) = load_model(&path, Some(&train))?;
        parts.push(name.clone().into_bytes());
        parts.push(bytes);
        models.push((name, m));
    }
    let specs = cfg.attack_specs();
    if specs.is_empty() {
        return Err(Error::Config("eval.attacks is empty".into()));
    }
    parts.push(b"transfer".to_vec());
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    let fp = digest_hex(&refs);
    let named: Vec<(&str, &Model)> = models.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let matrices = specs
        .iter()
        .map(|s| transfer_eval((&tname, &tmodel), &named, &test, s))
        .collect::<Result<Vec<_>>>()?;
    let rp = result_path(out, &fp);
    ResultRecord::Transfer {
        fingerprint: fp,
        matrices: matrices.clone(),
    }
    .save(&rp)?;
    ResultRecord::load(&rp)?;
    for m in &matrices {
        say(&m.table());
    }
    Ok(())
}

/// One row of the transfer summary, recomputed from the per-source entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub target: String,
    pub attack: String,
    pub sources: usize,
    pub mean: f64,
    pub std: f64,
}

/// Everything [`emit_report`] produced.
#[derive(Debug, Clone, Default)]
pub struct ReportOutput {
    /// Distinct records used.
    pub records: usize,
    pub warnings: Vec<String>,
    pub transfer: Vec<TransferRow>,
    /// Human-readable tables (also written to `report.txt`).
    pub text: String,
    pub files: Vec<PathBuf>,
}

/// Reads every `*.result.json` in `results` and writes `report.txt`,
/// `attacks.tsv`, `transfer.tsv` and `polar.tsv` into `out`.
///
/// Records are visited in file-name order; a record whose kind and
/// fingerprint were already seen is skipped with a warning.
pub fn emit_report(results: &Path, out: &Path) -> Result<ReportOutput> {
    let entries = std::fs::read_dir(results).map_err(|e| Error::io(results, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".result.json")))
        .collect();
    files.sort();

    let mut rep = ReportOutput::default();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for f in &files {
        let r = ResultRecord::load(f)?;
        if !seen.insert((r.kind(), r.fingerprint().to_string())) {
            rep.warnings.push(format!(
                "duplicate {} record {} in {}; skipped",
                r.kind(),
                r.fingerprint(),
                f.display()
            ));
            continue;
        }
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::invalid(format!("no result records in {}", results.display())));
    }
    rep.records = records.len();

    let mut robustness: Vec<(String, RobustnessReport)> = Vec::new();
    let mut text = String::new();
    let runs: Vec<&TrainReport> = records
        .iter()
        .filter_map(|r| match r {
            ResultRecord::Train(t) => Some(t),
            _ => None,
        })
        .collect();
    if !runs.is_empty() {
        writeln!(
            text,
            "{:<16} {:<16} {:>8} {:>8} {:>8} {:>10} {:>9}",
            "mode", "run", "acc%", "removed", "recall%", "saved-its", "wall-s"
        )
        .expect("write");
        for t in &runs {
            let recall = t.outlier_recall.map_or("-".to_string(), |r| format!("{:.1}", 100.0 * r));
            writeln!(
                text,
                "{:<16} {:<16} {:>8.2} {:>8} {:>8} {:>10.2} {:>9.2}",
                t.mode.name(),
                t.fingerprint,
                t.final_accuracy,
                t.removed.len(),
                recall,
                t.iterations_saved,
                t.wall_seconds
            )
            .expect("write");
            if let Some(r) = &t.robustness {
                robustness.push((t.fingerprint.clone(), r.clone()));
            }
        }
        text.push('\n');
    }
    for r in &records {
        if let ResultRecord::Attack { fingerprint, report } = r {
            robustness.push((fingerprint.clone(), report.clone()));
        }
    }

    let mut attacks_tsv = String::from("method\trun\tattack\tparams\taccuracy\n");
    if !robustness.is_empty() {
        let mut columns: Vec<String> = vec!["clean".into()];
        for (_, r) in &robustness {
            for rec in &r.records {
                let name = rec.attack.to_string();
                if !columns.contains(&name) {
                    columns.push(name);
                }
            }
        }
        write!(text, "{:<16} {:<16}", "method", "run").expect("write");
        for c in &columns {
            write!(text, " {c:>8}").expect("write");
        }
        text.push('\n');
        for (fp, r) in &robustness {
            let mut cells: BTreeMap<&str, f64> = BTreeMap::new();
            cells.insert("clean", r.clean_accuracy);
            writeln!(attacks_tsv, "{}\t{fp}\tclean\t-\t{:.4}", r.method, r.clean_accuracy).expect("write");
            for rec in &r.records {
                cells.insert(rec.attack.name(), rec.accuracy);
                writeln!(
                    attacks_tsv,
                    "{}\t{fp}\t{}\t{}\t{:.4}",
                    r.method,
                    rec.attack,
                    rec.params.describe(),
                    rec.accuracy
                )
                .expect("write");
            }
            write!(text, "{:<16} {:<16}", r.method, fp).expect("write");
            for c in &columns {
                match cells.get(c.as_str()) {
                    Some(v) => write!(text, " {v:>8.2}").expect("write"),
                    None => write!(text, " {:>8}", "-").expect("write"),
                }
            }
            text.push('\n');
        }
        text.push('\n');
    }

    let mut transfer_tsv = String::from("target\tattack\tsources\tmean\tstd\n");
    for r in &records {
        if let ResultRecord::Transfer { matrices, .. } = r {
            for m in matrices {
                let (mean, std) = mean_std(&m.accuracies);
                rep.transfer.push(TransferRow {
                    target: m.target.clone(),
                    attack: m.attack.kind.to_string(),
                    sources: m.accuracies.len(),
                    mean,
                    std,
                });
            }
        }
    }
    if !rep.transfer.is_empty() {
        writeln!(text, "{:<16} {:<8} {:>7} {:>8} {:>8}", "target", "attack", "sources", "mean", "std").expect("write");
        for t in &rep.transfer {
            writeln!(text, "{:<16} {:<8} {:>7} {:>8.2} {:>8.2}", t.target, t.attack, t.sources, t.mean, t.std)
                .expect("write");
            writeln!(transfer_tsv, "{}\t{}\t{}\t{}\t{}", t.target, t.attack, t.sources, t.mean, t.std)
                .expect("write");
        }
    }

    let polar = polar_data(&robustness.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, body) in [
        ("report.txt", &text),
        ("attacks.tsv", &attacks_tsv),
        ("transfer.tsv", &transfer_tsv),
        ("polar.tsv", &polar),
    ] {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        rep.files.push(p);
    }
    rep.text = text;
    Ok(rep)
}
