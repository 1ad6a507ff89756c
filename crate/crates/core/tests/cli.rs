use qtart::cli::{emit_report, result_path, ResultRecord};
use qtart::trainer::ExperimentConfig;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "data.synth_n=120",
    "data.synth_test_n=40",
    "data.synth_classes=3",
    "qtart.epochs=3",
    "qtart.tau=1",
    "qtart.gamma=10",
    "qtart.batch_size=32",
    "model.conv_channels=4",
    "eval.attacks=fgsm,pgd",
];

fn qtart(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qtart"));
    cmd.args(args).arg("--out").arg(out).arg("--quiet");
    for s in SMALL.iter().chain(extra) {
        cmd.arg("--set").arg(s);
    }
    cmd.env_remove("QTART_OUT").output().unwrap()
}

fn files_with(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    v
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_attack_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = qtart(out, &["train"], &["qtart.gamma=50"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let cfgs = files_with(out, ".cfg");
    assert_eq!(cfgs.len(), 1);
    assert_eq!(ExperimentConfig::load(&cfgs[0]).unwrap().run.gamma, 50);
    let masks = files_with(out, ".mask");
    assert_eq!(qtart::data::Mask::load(&masks[0]).unwrap().gamma(), 50);
    let ckpt = files_with(out, ".ckpt").remove(0);

    let ck = ckpt.to_str().unwrap();
    let o = qtart(out, &["attack", "--checkpoint", ck], &["qtart.gamma=50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = qtart(out, &["transfer", "--target", &format!("me={ck}"), "--source", &format!("me={ck}")], &["qtart.gamma=50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files_with(out, ".result.json").len(), 3);

    let report_dir = out.join("report");
    let o = Command::new(env!("CARGO_BIN_EXE_qtart"))
        .args(["report", "--quiet", "--results"])
        .arg(out)
        .arg("--out")
        .arg(&report_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.txt", "attacks.tsv", "transfer.tsv", "polar.tsv"] {
        assert!(report_dir.join(f).exists(), "{f}");
    }
    let attacks = std::fs::read_to_string(report_dir.join("attacks.tsv")).unwrap();
    assert!(attacks.lines().any(|l| l.contains("\tfgsm\t")) && attacks.lines().any(|l| l.contains("\tpgd\t")));
}

#[test]
fn rerunning_a_config_reuses_its_file_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for _ in 0..2 {
        assert!(qtart(out, &["train"], &["qtart.mode=baseline"]).status.success());
    }
    assert_eq!(files_with(out, ".result.json").len(), 1);
    assert_eq!(files_with(out, ".ckpt").len(), 1);
    let o = qtart(out, &["train"], &["qtart.mode=baseline", "seeds.weights=3"]);
    assert!(o.status.success());
    assert_eq!(files_with(out, ".result.json").len(), 2);
}

#[test]
fn synth_gen_writes_loadable_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtart(dir.path(), &["synth-gen"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sets = files_with(dir.path(), ".qtds");
    assert_eq!(sets.len(), 2);
    let lens: Vec<usize> = sets.iter().map(|p| qtart::data::load_dataset(p).unwrap().len()).collect();
    assert_eq!(lens, vec![40, 120]);
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.ckpt");
    let o = qtart(dir.path(), &["score", "--checkpoint", missing.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("error[io]:") && e.contains("absent.ckpt"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qtart")).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = qtart(dir.path(), &["train"], &["qtart.nope=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[config]"), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_qtart")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

/// The stored mean/std are deliberately wrong; the report must recompute them.
fn transfer_record(fp: &str, accs: &[f64]) -> String {
    format!(
        r#"{{"kind":"transfer","fingerprint":"{fp}","matrices":[{{"target":"t","attack":{{"kind":"fgsm","epsilon":0.03,"alpha":0.03,"steps":1,"decay":1.0,"random_init":false,"seed":0,"clamp":[0.0,1.0]}},"sources":[{}],"accuracies":[{}],"mean":99.0,"std":99.0,"includes_self":false}}]}}"#,
        (0..accs.len()).map(|i| format!("\"s{i}\"")).collect::<Vec<_>>().join(","),
        accs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
    )
}

#[test]
fn report_recomputes_transfer_statistics_and_skips_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("results");
    std::fs::create_dir(&res).unwrap();
    let accs = [40.0, 55.5, 61.25];
    std::fs::write(result_path(&res, "aaa"), transfer_record("aaa", &accs)).unwrap();
    std::fs::write(res.join("copy.result.json"), transfer_record("aaa", &accs)).unwrap();
    std::fs::write(result_path(&res, "bbb"), transfer_record("bbb", &[10.0])).unwrap();
    ResultRecord::load(&result_path(&res, "aaa")).expect("hand-written record parses");

    let rep = emit_report(&res, &dir.path().join("r")).unwrap();
    assert_eq!(rep.records, 2);
    assert_eq!(rep.warnings.len(), 1);
    assert!(rep.warnings[0].contains("aaa"));
    let mean = accs.iter().sum::<f64>() / 3.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let row = rep.transfer.iter().find(|t| t.sources == 3).unwrap();
    assert!((row.mean - mean).abs() < 1e-12 && (row.std - std).abs() < 1e-12);
    assert_eq!(rep.transfer.iter().find(|t| t.sources == 1).unwrap().std, 0.0);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert!(emit_report(&empty, &dir.path().join("r2")).is_err());
}
