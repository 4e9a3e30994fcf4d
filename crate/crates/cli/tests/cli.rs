use std::path::Path;
use std::process::{Command, Output};

use refex_cli::run::Manifest;
use serde_json::Value;

fn refex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refex")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn gen_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["gen", "--variant", "two-attr", "--seed", "7", "--train-count", "300", "--val-count", "60"];
    args.extend(["--test-count", "80", "--out", p(out)]);
    args.extend(extra);
    refex(&args)
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(gen_small(&a, &[]).status.success());
    assert!(gen_small(&b, &[]).status.success());
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.outputs.get("train.jsonl"), mb.outputs.get("train.jsonl"));
    let mut oa = ma.outputs.clone();
    let mut ob = mb.outputs.clone();
    // The resolved config differs only in the output path.
    oa.remove("config.resolved.toml");
    ob.remove("config.resolved.toml");
    assert_eq!(oa, ob);
    for f in ["train.jsonl", "val.jsonl", "test_random.jsonl", "test_A1.jsonl", "test_A2.jsonl", "stats.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let lines = std::fs::read_to_string(a.join("test_A1.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 80);
}

#[test]
fn default_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert!(refex(&["gen", "--variant", "two-attr", "--seed", "7", "--out", p(&out)]).status.success());
    let count = |f: &str| std::fs::read_to_string(out.join(f)).unwrap().lines().count();
    assert_eq!(count("train.jsonl"), 90000);
    for f in ["val.jsonl", "test_random.jsonl", "test_A1.jsonl", "test_A2.jsonl"] {
        assert_eq!(count(f), 2500, "{f}");
    }
}

#[test]
fn distractor_scale_shows_in_stats() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let base = ["--variant", "three-attr", "--seed", "3", "--train-count", "4000", "--test-count", "10"];
    let run = |out: &Path, scale: &str| {
        let mut args = vec!["gen"];
        args.extend(base);
        args.extend(["--val-count", "10", "--green-square-distractor-scale", scale, "--out", p(out)]);
        assert!(refex(&args).status.success());
        let stats: Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
        stats["train"]["mean_green_square_distractors"].as_f64().unwrap()
    };
    let full = run(&a, "1.0");
    let quarter = run(&b, "0.25");
    let ratio = quarter / full;
    assert!((ratio - 0.25).abs() <= 0.25 * 0.15, "ratio {ratio}");
}

#[test]
fn three_layers_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = refex(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("t")), "--layers", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 or 2 layers"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "lerning_rate = 0.1\n").unwrap();
    let out = refex(&["gen", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_eval_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = refex(&["eval", "--construct", "--examples", p(&empty), "--out", p(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset"));
}

#[test]
fn construction_eval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gen_small(&data, &[]).status.success());
    let out = dir.path().join("e");
    assert!(refex(&["eval", "--construct", "--data", p(&data), "--out", p(&out)]).status.success());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let tests = report["tests"].as_object().unwrap();
    assert_eq!(tests.len(), 3);
    for (name, r) in tests {
        assert_eq!(r["accuracy"].as_f64(), Some(1.0), "{name}");
        assert!(r["errors"].as_array().unwrap().is_empty());
    }
}

#[test]
fn train_eval_and_resolved_config_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gen_small(&data, &[]).status.success());
    let t1 = dir.path().join("t1");
    let out = refex(&["train", "--data", p(&data), "--out", p(&t1), "--epochs", "2", "--batch-size", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["best.ckpt", "log.csv", "report.json", "config.resolved.toml", "manifest.json"] {
        assert!(t1.join(f).exists(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(t1.join("report.json")).unwrap()).unwrap();

    // Rerun from the resolved config alone, into a new directory.
    let resolved = std::fs::read_to_string(t1.join("config.resolved.toml")).unwrap();
    let t2 = dir.path().join("t2");
    let cfg2 = dir.path().join("rerun.toml");
    std::fs::write(&cfg2, resolved.replace(p(&t1), p(&t2))).unwrap();
    assert!(refex(&["train", "--config", p(&cfg2)]).status.success());
    assert_eq!(std::fs::read(t1.join("best.ckpt")).unwrap(), std::fs::read(t2.join("best.ckpt")).unwrap());
    assert_eq!(std::fs::read(t1.join("log.csv")).unwrap(), std::fs::read(t2.join("log.csv")).unwrap());

    // The saved checkpoint evaluates exactly as reported during training.
    let e = dir.path().join("e");
    let ckpt = t1.join("best.ckpt");
    assert!(refex(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&e)]).status.success());
    let eval: Value = serde_json::from_str(&std::fs::read_to_string(e.join("report.json")).unwrap()).unwrap();
    for (tag, acc) in report["test"].as_object().unwrap() {
        assert_eq!(eval["tests"][format!("test_{tag}")]["accuracy"].as_f64(), acc.as_f64(), "{tag}");
    }
}

#[test]
fn eval_rejects_variant_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gen_small(&data, &[]).status.success());
    let t = dir.path().join("t");
    assert!(refex(&["train", "--data", p(&data), "--out", p(&t), "--epochs", "1"]).status.success());
    let other = dir.path().join("o");
    let gen = refex(&["gen", "--variant", "three-attr", "--train-count", "5", "--val-count", "5", "--test-count", "5", "--out", p(&other)]);
    assert!(gen.status.success());
    let (ckpt, e) = (t.join("best.ckpt"), dir.path().join("e"));
    let out = refex(&["eval", "--checkpoint", p(&ckpt), "--data", p(&other), "--out", p(&e)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("three-attr"));
}

#[test]
fn inspect_construction_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gen_small(&data, &[]).status.success());
    let out = dir.path().join("i");
    let args = ["inspect", "--construct", "--data", p(&data), "--example-id", "0", "--out", p(&out)];
    assert!(refex(&args).status.success());
    for f in ["M_construct.csv", "M_construct.pgm", "M_construct.svg", "s_construct.csv", "column_ordering.json", "decomposition.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let order: Value = serde_json::from_str(&std::fs::read_to_string(out.join("column_ordering.json")).unwrap()).unwrap();
    for c in order["layer0_head0"].as_array().unwrap() {
        assert_eq!(c["holds"], Value::Bool(true), "{c}");
    }
    let dec: Value = serde_json::from_str(&std::fs::read_to_string(out.join("decomposition.json")).unwrap()).unwrap();
    assert_eq!(dec["target"], dec["prediction"]);
    assert!(dec["max_identity_error"].as_f64().unwrap() < 1e-5);
}

#[test]
fn inspect_two_layer_checkpoint_emits_notice() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(gen_small(&data, &[]).status.success());
    let t = dir.path().join("t");
    let args = ["train", "--data", p(&data), "--out", p(&t), "--epochs", "1", "--layers", "2"];
    assert!(refex(&args).status.success());
    let out = dir.path().join("i");
    let ckpt = t.join("best.ckpt");
    let args = ["inspect", "--checkpoint", p(&ckpt), "--data", p(&data), "--example-id", "1", "--out", p(&out)];
    let res = refex(&args);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("notice"));
    assert!(out.join("M_learned.csv").exists());
    assert!(out.join("M_learned_l1_h0.csv").exists());
    assert!(!out.join("decomposition.json").exists());
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(refex(&["reproduce", "table7", "--out", p(dir.path())]).status.code(), Some(2));
}
