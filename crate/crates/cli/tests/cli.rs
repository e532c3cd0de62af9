use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsm"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tsm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Asserts a failed run printed exactly one JSON error line of `kind`.
fn json_error(out: &Output, kind: &str) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["error"], kind, "{stderr}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    v
}

fn gen_data(dir: &Path) {
    ok(&[
        "gen-data",
        "--out",
        p(dir),
        "--clips-per-class",
        "4",
        "--test-clips-per-class",
        "1",
        "--seed",
        "2",
    ]);
}

fn train(dir: &Path, out: &str, modality: &str) {
    ok(&[
        "train",
        "--phase",
        "1",
        "--modality",
        modality,
        "--train",
        p(&dir.join("train.jsonl")),
        "--val",
        p(&dir.join("val.jsonl")),
        "--out",
        p(&dir.join(out)),
        "--epochs",
        "2",
        "--seed",
        "1",
    ]);
}

#[test]
fn grad_check_passes() {
    let stdout = ok(&["grad-check"]);
    assert!(stdout.contains("micro_model"), "{stdout}");
}

#[test]
fn shift_demo_shows_both_directions() {
    let stdout = ok(&[
        "shift-demo",
        "--segments",
        "3",
        "--channels",
        "4",
        "--fold-div",
        "4",
    ]);
    assert!(
        stdout.contains("channel 0: [  1   2   3] -> [  2   3   0]"),
        "{stdout}"
    );
    assert!(
        stdout.contains("channel 1: [ 11  12  13] -> [  0  11  12]"),
        "{stdout}"
    );
    assert!(
        stdout.contains("channel 3: [ 31  32  33] -> [ 31  32  33]"),
        "{stdout}"
    );
}

#[test]
fn training_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_data(d);
    train(d, "a", "ir");
    train(d, "b", "ir");
    train(d, "c", "rgb");
    let log = fs::read(d.join("a/log.csv")).unwrap();
    assert_eq!(log, fs::read(d.join("b/log.csv")).unwrap());
    assert!(
        String::from_utf8_lossy(&log).starts_with("epoch,train_loss,val_top1,val_top5,seconds\n")
    );
    assert_eq!(
        fs::read(d.join("a/model.ckpt")).unwrap(),
        fs::read(d.join("b/model.ckpt")).unwrap()
    );

    let test = d.join("test.jsonl");
    for (name, model) in [
        ("a", "a/model.ckpt"),
        ("b", "b/model.ckpt"),
        ("c", "c/model.ckpt"),
    ] {
        let modality = if name == "c" { "rgb" } else { "ir" };
        let manifest = d.join(format!("test_{modality}.jsonl"));
        if !manifest.exists() {
            let all = fs::read_to_string(&test).unwrap();
            let keep: String = all
                .lines()
                .filter(|l| l.contains(&format!("\"modality\":\"{modality}\"")))
                .map(|l| format!("{l}\n"))
                .collect();
            fs::write(&manifest, keep).unwrap();
        }
        ok(&[
            "predict",
            "--checkpoint",
            p(&d.join(model)),
            "--manifest",
            p(&manifest),
            "--out",
            p(&d.join(format!("{name}.jsonl"))),
        ]);
    }
    let (a, b, c) = (d.join("a.jsonl"), d.join("b.jsonl"), d.join("c.jsonl"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let fused = d.join("fused.jsonl");
    let preds = format!("{},{},{}", p(&a), p(&b), p(&c));
    ok(&[
        "ensemble",
        "--preds",
        &preds,
        "--weights",
        "1,0,0",
        "--out",
        p(&fused),
    ]);
    assert_eq!(fs::read(&fused).unwrap(), fs::read(&a).unwrap());

    let eval = ok(&["eval", "--preds", p(&a), "--labels", p(&test)]);
    assert!(eval.contains("top1") && eval.contains("top5"), "{eval}");
    let report = ok(&[
        "report",
        "--labels",
        p(&test),
        "--row",
        &format!("IR={}", p(&a)),
        "--csv",
    ]);
    assert!(report.starts_with("method,top1,top5\nIR,"), "{report}");

    let spec = d.join("ens.json");
    ok(&[
        "ensemble",
        "--preds",
        &format!("{},{}", p(&a), p(&c)),
        "--search",
        "--labels",
        p(&test),
        "--out",
        p(&fused),
        "--spec-out",
        p(&spec),
    ]);
    let again = d.join("again.jsonl");
    ok(&["ensemble", "--spec", p(&spec), "--out", p(&again)]);
    assert_eq!(fs::read(&fused).unwrap(), fs::read(&again).unwrap());

    let mismatch = tsm(&[
        "predict",
        "--checkpoint",
        p(&d.join("a/model.ckpt")),
        "--manifest",
        p(&d.join("test_rgb.jsonl")),
        "--out",
        p(&d.join("x.jsonl")),
    ]);
    let v = json_error(&mismatch, "modality_mismatch");
    let msg = v["message"].as_str().unwrap();
    assert!(msg.contains("ir") && msg.contains("rgb"), "{msg}");
}

#[test]
fn errors_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    json_error(&tsm(&["train", "--bogus"]), "usage");
    json_error(
        &tsm(&[
            "eval",
            "--preds",
            p(&d.join("nope.jsonl")),
            "--labels",
            p(&d.join("nope.jsonl")),
        ]),
        "io",
    );
    gen_data(d);
    let train = p(&d.join("train.jsonl")).to_string();
    let val = p(&d.join("val.jsonl")).to_string();
    let out = tsm(&[
        "train",
        "--phase",
        "2",
        "--modality",
        "ir",
        "--train",
        &train,
        "--val",
        &val,
        "--out",
        p(&d.join("m")),
    ]);
    json_error(&out, "usage");
    assert_eq!(out.status.code(), Some(2));
    let out = tsm(&[
        "train",
        "--phase",
        "1",
        "--modality",
        "ir",
        "--train",
        &train,
        "--out",
        p(&d.join("m")),
    ]);
    json_error(&out, "usage");
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = serde_json::json!({
        "data": {"clips_per_class": 4, "test_clips_per_class": 1},
        "train": {"epochs_phase1": 1, "epochs_phase2": 1},
        "members": [
            {"name": "ir", "modality": "ir", "capacity": "small", "shift": true},
            {"name": "rgb", "modality": "rgb", "capacity": "small", "shift": true}
        ],
        "ensemble_step": 0.5
    });
    let path = d.join("cfg.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let first = ok(&[
        "run",
        "--config",
        p(&path),
        "--out",
        p(&d.join("a")),
        "--quiet",
        "--seed",
        "4",
    ]);
    let second = ok(&[
        "run",
        "--config",
        p(&path),
        "--out",
        p(&d.join("b")),
        "--quiet",
        "--seed",
        "4",
    ]);
    assert_eq!(first, second);
    for f in [
        "ensemble_test.jsonl",
        "report_test.txt",
        "members/ir/phase2.ckpt",
        "config.json",
    ] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let printed = ok(&["run", "--config", p(&path), "--print-config", "--seed", "9"]);
    let v: serde_json::Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["train"]["seed"], 9);
}
