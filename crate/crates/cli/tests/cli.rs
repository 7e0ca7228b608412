use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use palmnet_cli::{EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, RESOLVED_CONFIG};

fn palmcli(args: &[&str]) -> Output {
    palmcli_env(args, None)
}

fn palmcli_env(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_palmcli"));
    c.args(args).env("RUST_LOG", "warn").env_remove("PALMW_THREADS");
    if let Some(t) = threads {
        c.env("PALMW_THREADS", t);
    }
    c.output().expect("spawn palmcli")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), EXIT_OK, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn resolved(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(RESOLVED_CONFIG)).unwrap()).unwrap()
}

/// 4 palms, 3 small images each.
fn tiny_dataset(root: &Path) -> PathBuf {
    let out = root.join("data");
    ok(palmcli(&[
        "synth", "--palms", "4", "--fixed-samples", "3", "--seed", "5", "--min-side", "40",
        "--max-side", "64", "--out", s(&out),
    ]));
    out
}

fn tiny_localizer(root: &Path, data: &Path) -> PathBuf {
    let out = root.join("loc");
    ok(palmcli(&[
        "train-localizer", "--dataset", s(data), "--widths", "4,4,4", "--epochs-a", "1",
        "--epochs-ab", "1", "--micro-batch", "8", "--out", s(&out),
    ]));
    out.join("localizer.palmw")
}

#[test]
fn synth_is_reproducible_and_snapshots_its_config() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(palmcli(&["synth", "--palms", "3", "--seed", "7", "--max-side", "64", "--out", s(d)]));
    }
    let ma = std::fs::read(a.join("manifest.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("manifest.csv")).unwrap());
    let r = resolved(&a);
    assert_eq!(r["command"], "synth");
    assert_eq!(r["palms"], 3);
    assert_eq!(r["seed"], 7);
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&palmcli(&["synth", "--palms", "3"])), EXIT_USAGE);
    assert_eq!(code(&palmcli(&["frobnicate"])), EXIT_USAGE);
    assert_eq!(code(&palmcli(&["--help"])), EXIT_OK);
    let out = t.path().join("zero");
    assert_eq!(code(&palmcli(&["synth", "--palms", "0", "--out", s(&out)])), EXIT_RUNTIME);
    let missing = t.path().join("nope");
    let o = palmcli(&["eval", "--model", s(&missing), "--dataset", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&o), EXIT_RUNTIME);
}

#[test]
fn thread_cap_is_validated_and_recorded() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    let args = ["synth", "--palms", "1", "--max-side", "48", "--out", s(&out)];
    assert_eq!(code(&palmcli_env(&args, Some("zero"))), EXIT_USAGE);
    assert_eq!(code(&palmcli_env(&args, Some("0"))), EXIT_USAGE);
    ok(palmcli_env(&args, Some("3")));
    assert_eq!(resolved(&out)["threads"], 3);
}

#[test]
fn strategies_needing_a_localizer_fail_before_training() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("m");
    for strategy in ["S0", "S1", "S5"] {
        let o = palmcli(&[
            "train", "--strategy", strategy, "--epochs", "40", "--dataset", "/nonexistent",
            "--out", s(&out),
        ]);
        assert_eq!(code(&o), EXIT_RUNTIME, "{strategy}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("localizer"));
    }
    assert!(!out.exists());
    let o = palmcli(&[
        "train", "--strategy", "S5", "--epochs", "30", "--dataset", "/nonexistent", "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), EXIT_USAGE);
}

#[test]
fn gradcheck_passes() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(palmcli(&["gradcheck", "--out", s(t.path())]));
    assert!(!out.contains("FAIL"));
    assert_eq!(out.matches("PASS").count(), palmnet::gradsuite::CASES.len());
    assert!(t.path().join("gradcheck.csv").exists());
}

#[test]
fn extract_roi_from_ground_truth() {
    let t = tempfile::tempdir().unwrap();
    let data = tiny_dataset(t.path());
    let out = t.path().join("rois");
    ok(palmcli(&["extract-roi", "--dataset", s(&data), "--side", "32", "--out", s(&out)]));
    let n = std::fs::read_dir(out.join("rois")).unwrap().count();
    assert_eq!(n, 12);
    let img = palmnet::image::Image::load(&out.join("rois").read_dir().unwrap().next().unwrap().unwrap().path()).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
    assert_eq!(resolved(&out)["command"], "extract-roi");
}

#[test]
fn train_eval_report_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path();
    let data = tiny_dataset(root);
    let loc = tiny_localizer(root, &data);
    let nme: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("loc/nme.json")).unwrap()).unwrap();
    assert!(nme["final_nme"].as_f64().unwrap().is_finite());

    let train = |strategy: &str, epochs: &str, dir: &str| {
        let out = root.join(dir);
        ok(palmcli(&[
            "train", "--strategy", strategy, "--epochs", epochs, "--dataset", s(&data),
            "--localizer", s(&loc), "--widths", "4,4,4", "--micro-batch", "8", "--out", s(&out),
        ]));
        out
    };
    let s5 = train("S5", "60", "s5");
    let log = std::fs::read_to_string(s5.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 61);
    let s2 = train("S2", "2", "s2a");
    let s2b = train("S2", "2", "s2b");
    assert_eq!(
        std::fs::read(s2.join("model.palmw")).unwrap(),
        std::fs::read(s2b.join("model.palmw")).unwrap()
    );
    let s0h = train("S0h", "2", "s0h");

    // Replaying the resolved config reproduces the weights.
    let replay = root.join("replay");
    ok(palmcli(&["train", "--config", s(&s2.join(RESOLVED_CONFIG)), "--out", s(&replay)]));
    assert_eq!(
        std::fs::read(s2.join("model.palmw")).unwrap(),
        std::fs::read(replay.join("model.palmw")).unwrap()
    );

    let eval = |classifier: &str, dir: &str| {
        let out = root.join(dir);
        let stdout = ok(palmcli(&[
            "eval", "--model", s(&s2.join("model.palmw")), "--dataset", s(&data), "--classifier",
            classifier, "--pls-components", "3", "--out", s(&out),
        ]));
        (out, stdout)
    };
    let (e1, out1) = eval("knn", "e1");
    let (_, out2) = eval("knn", "e2");
    let hash = |o: &str| o.lines().find(|l| l.starts_with("report hash")).unwrap().to_string();
    assert_eq!(hash(&out1), hash(&out2));
    // Identical weights under another path hash the same.
    let moved = ok(palmcli(&[
        "eval", "--model", s(&replay.join("model.palmw")), "--dataset", s(&data), "--classifier", "knn",
        "--pls-components", "3", "--out", s(&root.join("e4")),
    ]));
    assert_eq!(hash(&out1), hash(&moved));
    for f in ["report.json", "cmc.csv", "cmc.svg", "ranks.csv", "scores.csv", RESOLVED_CONFIG] {
        assert!(e1.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(e1.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rank1"], report["cmc"][0]);
    eval("softmax", "e3");

    let rep = root.join("report");
    let table = ok(palmcli(&[
        "report", "--model", s(&s0h.join("model.palmw")), "--model", s(&s2.join("model.palmw")),
        "--dataset", s(&data), "--pls-components", "3", "--out", s(&rep),
    ]));
    assert!(table.starts_with("| strategy | softmax | pls | svm | knn |"));
    assert!(table.contains("| S0h |") && table.contains("| S2 |"));
    let grid: palmnet_cli::StrategyGrid =
        serde_json::from_str(&std::fs::read_to_string(rep.join("table.json")).unwrap()).unwrap();
    assert_eq!(grid.cells.len(), 8);
    assert!(rep.join("S2/pls/report.json").exists());

    // A localizer has no recognition head to evaluate.
    let o = palmcli(&["eval", "--model", s(&loc), "--dataset", s(&data), "--out", s(&rep)]);
    assert_eq!(code(&o), EXIT_RUNTIME);
}
