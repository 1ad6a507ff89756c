//! Drives the command-line front end in-process: train two modes, attack one
//! checkpoint, then aggregate every result into report tables.

use qtart::cli::dispatch;

fn main() {
    let out = std::env::temp_dir().join("qtart-report-example");
    let _ = std::fs::remove_dir_all(&out);
    let out = out.to_str().expect("utf-8 temp dir");
    let common = ["--out", out, "--quiet", "--set", "qtart.epochs=6", "--set", "data.synth_n=400", "--set", "eval.attacks=fgsm,pgd"];
    let run = |verb: &[&str]| {
        let argv: Vec<&str> = ["qtart"].iter().chain(verb).chain(&common).copied().collect();
        let code = dispatch(argv);
        assert_eq!(code, 0, "{verb:?}");
    };
    run(&["train", "--set", "qtart.mode=baseline"]);
    run(&["train", "--set", "qtart.mode=qtart"]);
    let ckpt = std::fs::read_dir(out)
        .expect("output dir")
        .map(|e| e.expect("entry").path())
        .find(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .expect("a checkpoint");
    run(&["attack", "--checkpoint", ckpt.to_str().unwrap(), "--method", "first-ckpt"]);
    std::process::exit(dispatch(["qtart", "report", "--out", out]));
}
