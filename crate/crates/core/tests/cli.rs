use std::path::Path;
use std::process::{Command, Output};

fn run(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_piml-aero"))
        .arg("--out-dir")
        .arg(out_dir)
        .arg("--threads")
        .arg("1")
        .args(args)
        .env_remove("PIML_AERO_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const POINT: [&str; 14] = [
    "--v",
    "24",
    "--alpha",
    "6",
    "--omega-star",
    "7200",
    "--omega-port",
    "5400",
    "--theta-star",
    "25",
    "--theta-port",
    "47",
    "--theta-elev",
    "-4",
];

#[test]
fn gen_data_is_byte_reproducible_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--n", "12", "--train", "6", "--seed", "3"];
    let a = run(dir.path(), &args);
    assert!(a.status.success(), "{}", stderr(&a));
    let first = std::fs::read(dir.path().join("dataset.csv")).unwrap();
    let b = run(dir.path(), &args);
    assert!(b.status.success());
    assert_eq!(
        first,
        std::fs::read(dir.path().join("dataset.csv")).unwrap()
    );

    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dataset.json")).unwrap())
            .unwrap();
    assert_eq!(side["seed"], 3);
    assert_eq!(side["records"], 12);
    assert_eq!(side["train"], 6);
    assert_eq!(side["csv_sha256"].as_str().unwrap().len(), 64);

    let c = run(
        dir.path(),
        &[
            "gen-data", "--n", "12", "--train", "6", "--seed", "4", "--output",
        ],
    );
    assert_eq!(
        c.status.code(),
        Some(2),
        "missing option value is a usage error"
    );
}

#[test]
fn predict_json_reports_four_finite_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["predict", "--json"];
    args.extend(POINT);
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    for key in ["CL", "CD", "Cl", "Cm"] {
        assert!(v[key].as_f64().unwrap().is_finite(), "{key} in {v}");
    }
}

#[test]
fn exit_codes_distinguish_usage_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(dir.path(), &["predict", "--v", "3"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(dir.path(), &["train", "--model", "wing"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(dir.path(), &["gen-data", "--n", "5", "--train", "5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(dir.path(), &["gradcheck", "--check", "pipeline-mach"])
            .status
            .code(),
        Some(2)
    );

    let missing = run(dir.path(), &["eval", "--model", "piml-a"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("dataset.csv"));
}

#[test]
fn gradcheck_passes_at_default_bar_and_fails_at_an_impossible_one() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(
        dir.path(),
        &[
            "gradcheck",
            "--check",
            "pipeline-alpha",
            "--check",
            "loss-ann",
        ],
    );
    assert!(ok.status.success(), "{}{}", stdout(&ok), stderr(&ok));
    let strict = run(
        dir.path(),
        &[
            "gradcheck",
            "--check",
            "pipeline-alpha",
            "--threshold",
            "1e-12",
        ],
    );
    assert_eq!(strict.status.code(), Some(1), "{}", stdout(&strict));
    let list = run(dir.path(), &["gradcheck", "--list"]);
    assert!(stdout(&list).contains("loss-piml-b"));
}

#[test]
fn train_eval_predict_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["gen-data", "--n", "14", "--train", "8"])
        .status
        .success());
    for model in ["ann", "piml-b"] {
        let o = run(
            d,
            &[
                "train",
                "--model",
                model,
                "--epochs",
                "6",
                "--hidden-width",
                "8",
                "--hidden-depth",
                "1",
            ],
        );
        assert!(o.status.success(), "{model}: {}", stderr(&o));
        let hist = std::fs::read_to_string(d.join(format!("{model}_history.csv"))).unwrap();
        let mut lines = hist.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,lr,seconds"));
        assert_eq!(lines.count(), 6);
    }

    let e = run(d, &["eval", "--model", "ann"]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(d.join("eval_ann.csv").exists() && d.join("eval_ann_errors.csv").exists());

    let mut args = vec!["predict", "--model", "ann", "--json"];
    args.extend(POINT);
    let p = run(d, &args);
    assert!(p.status.success(), "{}", stderr(&p));

    let missing = run(d, &["report"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("piml-a.json"));
    let r = run(d, &["report", "--models", "piml-b,ann"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let corr = std::fs::read_to_string(d.join("piml-b_corrections.csv")).unwrap();
    assert!(corr.starts_with("index,split,dva_star"));
    assert!(d.join("comparison.csv").exists());
}
