use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssod_core::fusion::{weighted_boxes_fusion, Detection, WbfParams};
use ssod_core::geometry::BBox;
use ssod_core::pipeline::config::CONFIG_KEYS;
use ssod_core::pipeline::RunRecord;

const BIN: &str = env!("CARGO_BIN_EXE_ssod");

const SMALL: &str = "\
epochs = 4
learning_rate = 60
target_size = 40
toy.positive_weight = 5
labeled_fraction = 0.2
n_images = 60
replication_seeds = 0,1
";

fn ssod(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("SSOD_CONFIG")
        .args(args)
        .output()
        .expect("run ssod")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = ssod(dir, args);
    assert!(o.status.success(), "ssod {args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    ssod(dir, args).status.code().unwrap()
}

/// A temp dir holding `small.conf` and a 60-image synthetic dataset in `ds/`.
fn workspace() -> tempfile::TempDir {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("small.conf"), SMALL).unwrap();
    ok(t.path(), &["--config", "small.conf", "synth", "--out", "ds"]);
    t
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn lines(p: PathBuf) -> usize {
    String::from_utf8(read(p)).unwrap().lines().count()
}

#[test]
fn help_lists_every_config_key_on_every_command() {
    let t = tempfile::tempdir().unwrap();
    for cmd in [vec![], vec!["synth"], vec!["split"], vec!["train"], vec!["eval"], vec!["fuse"], vec!["simulate"]] {
        let mut args = cmd.clone();
        args.push("--help");
        let out = ok(t.path(), &args);
        for (k, _) in CONFIG_KEYS {
            assert!(out.contains(k), "`{k}` missing from help of {cmd:?}");
        }
        assert!(out.contains("Exit codes"));
    }
}

#[test]
fn split_writes_three_75_5_20_replications_reproducibly() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.conf"), "n_images = 100\ntarget_size = 40\n").unwrap();
    ok(t.path(), &["--config", "c.conf", "synth", "--out", "ds"]);
    ok(t.path(), &["--config", "c.conf", "split", "--data", "ds", "--out", "a"]);
    ok(t.path(), &["--config", "c.conf", "split", "--data", "ds", "--out", "b", "--seed", "0,1,2"]);
    for k in 0..3 {
        let rep = t.path().join(format!("a/rep{k}"));
        assert_eq!(
            [lines(rep.join("train.txt")), lines(rep.join("val.txt")), lines(rep.join("test.txt"))],
            [75, 5, 20]
        );
        for f in ["train.txt", "val.txt", "test.txt"] {
            assert_eq!(read(rep.join(f)), read(t.path().join(format!("b/rep{k}/{f}"))));
        }
    }
    assert!(!t.path().join("a/rep3").exists());
    assert_ne!(read(t.path().join("a/rep0/test.txt")), read(t.path().join("a/rep1/test.txt")));

    ok(t.path(), &["--config", "c.conf", "split", "--data", "ds", "--out", "c", "--train", "0.8", "--val", "0.1", "--test", "0.1"]);
    let rep = t.path().join("c/rep0");
    assert_eq!([lines(rep.join("train.txt")), lines(rep.join("val.txt")), lines(rep.join("test.txt"))], [80, 10, 10]);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let t = workspace();
    let p = t.path();
    assert_eq!(code(p, &["--config", "small.conf", "split", "--data", "missing", "--out", "x"]), 3);
    assert_eq!(code(p, &["--config", "nope.conf", "split", "--data", "ds", "--out", "x"]), 2);
    assert_eq!(code(p, &["--config", "small.conf", "--set", "epochs=0", "split", "--data", "ds", "--out", "x"]), 2);
    assert_eq!(code(p, &["fuse", "--out", "x"]), 2);
    assert_eq!(code(p, &["--config", "small.conf", "simulate", "--mode", "cross-domain", "--out", "x"]), 2);
    let o = ssod(
        p,
        &[
            "--config",
            "small.conf",
            "--set",
            "detector=subprocess",
            "--set",
            "detector.command=/nonexistent/worker",
            "train",
            "--data",
            "ds",
            "--out",
            "x",
            "--mode",
            "full",
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_are_reported_together() {
    let t = workspace();
    let o = ssod(
        t.path(),
        &["--config", "small.conf", "--set", "epochs=1", "--set", "batch_size=0", "--set", "wbf_iou=3", "split", "--data", "ds", "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for k in ["epochs", "batch_size", "wbf_iou"] {
        assert!(err.contains(k), "{err}");
    }
}

#[test]
fn environment_variable_sets_the_config_path() {
    let t = workspace();
    let o = Command::new(BIN)
        .current_dir(t.path())
        .env("SSOD_CONFIG", "small.conf")
        .args(["split", "--data", "ds", "--out", "s"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(read(t.path().join("s/config.conf")), {
        ok(t.path(), &["--config", "small.conf", "split", "--data", "ds", "--out", "s2"]);
        read(t.path().join("s2/config.conf"))
    });
}

#[test]
fn config_hash_ignores_key_order_and_comments() {
    let t = workspace();
    let reordered: String = SMALL.lines().rev().map(|l| format!("{l}  # note\n")).collect();
    fs::write(t.path().join("rev.conf"), reordered).unwrap();
    ok(t.path(), &["--config", "small.conf", "split", "--data", "ds", "--out", "a"]);
    ok(t.path(), &["--config", "rev.conf", "split", "--data", "ds", "--out", "b"]);
    let hash = |d: &str| {
        let m: serde_json::Value = serde_json::from_slice(&read(t.path().join(d).join("manifest.json"))).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("a"), hash("b"));
    assert!(hash("a").starts_with("sha256:"));
}

#[test]
fn fuse_reproduces_the_two_source_example_bit_exactly() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    let rows = "image_id,class,conf,x1,y1,x2,y2\nimg,0,0.9,0,0,10,10\nimg,0,0.6,2,0,12,10\n";
    fs::write(p.join("a.csv"), rows).unwrap();
    fs::write(p.join("b.csv"), rows).unwrap();
    ok(p, &["fuse", "a.csv", "b.csv", "--out", "f", "--iou", "0.55", "--skip-conf", "0"]);
    let text = String::from_utf8(read(p.join("f/fused.csv"))).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    let d = |x: f64, c: f64| Detection::new(BBox::new(x, 0.0, x + 10.0, 10.0), 0, c);
    let src = vec![d(0.0, 0.9), d(2.0, 0.6)];
    let want = weighted_boxes_fusion(&[src.clone(), src], WbfParams { iou_thresh: 0.55, skip_conf: 0.0 });
    assert_eq!(want.len(), 1);
    assert_eq!(text.lines().count(), 2);
    let w = want[0].detection();
    assert_eq!(row, vec![w.confidence, w.bbox.x1, w.bbox.y1, w.bbox.x2, w.bbox.y2]);
    assert!((row[1] - 0.8).abs() < 1e-12 && (row[3] - 10.8).abs() < 1e-12 && row[0] == 0.75);

    ok(p, &["fuse", "a.csv", "--out", "g"]);
    let single = String::from_utf8(read(p.join("g/fused.csv"))).unwrap();
    assert_eq!(single.lines().count(), 2);
}

#[test]
fn fuse_reports_malformed_rows_with_line_numbers() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("a.csv"), "image_id,class,conf,x1,y1,x2,y2\nimg,0,0.9,0,0,10,10\nimg,0,0.6,2,0,12\n").unwrap();
    let o = ssod(t.path(), &["fuse", "a.csv", "--out", "f"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a.csv:3"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let t = workspace();
    let p = t.path();
    let base = ["--config", "small.conf", "train", "--data", "ds", "--mode", "semi", "--labeled-fraction", "0.2"];
    let with = |out: &str, extra: &[&str]| {
        let mut v: Vec<&str> = base.to_vec();
        v.extend(["--out", out]);
        v.extend(extra);
        v.iter().map(|s| s.to_string()).collect::<Vec<_>>()
    };
    let run = |args: Vec<String>| ok(p, &args.iter().map(String::as_str).collect::<Vec<_>>());
    run(with("full_run", &[]));
    run(with("parts", &["--stop-after-epoch", "3"]));
    assert!(!p.join("parts/model.ckpt").exists());
    assert_eq!(code(p, &with("parts", &[]).iter().map(String::as_str).collect::<Vec<_>>()), 2);
    run(with("parts", &["--resume"]));
    for f in ["run_record.json", "model.ckpt", "predictions.csv", "epochs.csv", "calibration.csv", "state.ckpt"] {
        assert_eq!(read(p.join("full_run").join(f)), read(p.join("parts").join(f)), "{f}");
    }
}

#[test]
fn overwrite_reproduces_identical_outputs() {
    let t = workspace();
    let p = t.path();
    let args = ["--config", "small.conf", "train", "--data", "ds", "--out", "o", "--mode", "full"];
    ok(p, &args);
    let first: BTreeMap<_, _> = ["run_record.json", "model.ckpt", "predictions.csv", "config.conf"]
        .iter()
        .map(|f| (*f, read(p.join("o").join(f))))
        .collect();
    assert_eq!(code(p, &args), 2);
    let mut again = args.to_vec();
    again.push("--overwrite");
    ok(p, &again);
    for (f, bytes) in first {
        assert_eq!(bytes, read(p.join("o").join(f)), "{f}");
    }
}

#[test]
fn full_mode_record_has_no_pseudo_labels_and_eval_matches_it() {
    let t = workspace();
    let p = t.path();
    ok(p, &["--config", "small.conf", "split", "--data", "ds", "--out", "sp"]);
    ok(p, &["--config", "small.conf", "train", "--data", "ds", "--out", "m", "--mode", "full", "--split-dir", "sp", "--replication", "1"]);
    let rec = RunRecord::from_json(&String::from_utf8(read(p.join("m/run_record.json"))).unwrap()).unwrap();
    let arm = &rec.replications[0].arms[0];
    assert_eq!(arm.name, "full");
    assert!(arm.log.epochs.iter().all(|e| e.total_pseudo_labels() == 0 && e.pseudo_images == 0));
    assert_eq!(read(p.join("m/test_ids.txt")), read(p.join("sp/rep1/test.txt")));

    ok(p, &["eval", "--model", "m/model.ckpt", "--data", "ds", "--ids", "sp/rep1/test.txt", "--out", "e"]);
    let report: serde_json::Value = serde_json::from_slice(&read(p.join("e/eval.json"))).unwrap();
    assert_eq!(report["map50"].as_f64().unwrap(), arm.test.map50);
    assert_eq!(report["map50_95"].as_f64().unwrap(), arm.test.map50_95);
    assert_eq!(read(p.join("e/predictions.csv")), read(p.join("m/predictions.csv")));
    let csv = String::from_utf8(read(p.join("e/eval.csv"))).unwrap();
    assert!(csv.starts_with("metric,class,value\nmap50,all,"));

    let mut again = vec!["eval", "--model", "m/model.ckpt", "--data", "ds", "--ids", "sp/rep1/test.txt", "--out", "e"];
    again.push("--overwrite");
    ok(p, &again);
    assert_eq!(report, serde_json::from_slice::<serde_json::Value>(&read(p.join("e/eval.json"))).unwrap());

    ok(p, &["eval", "--model", "m/model.ckpt", "--data", "ds", "--out", "o", "--oracle"]);
    let o: serde_json::Value = serde_json::from_slice(&read(p.join("o/eval.json"))).unwrap();
    assert_eq!((o["map50"].as_f64(), o["map50_95"].as_f64()), (Some(1.0), Some(1.0)));
    for v in o["per_class_ap50"].as_object().unwrap().values() {
        assert_eq!(v.as_f64(), Some(1.0));
    }
}

#[test]
fn eval_rejects_files_that_are_not_models() {
    let t = workspace();
    let p = t.path();
    fs::write(p.join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(p, &["eval", "--model", "junk.ckpt", "--data", "ds", "--out", "e"]), 3);
    ok(p, &["--config", "small.conf", "train", "--data", "ds", "--out", "s", "--mode", "full", "--stop-after-epoch", "2"]);
    assert_eq!(code(p, &["eval", "--model", "s/state.ckpt", "--data", "ds", "--out", "e"]), 3);
    let mut bytes = read(p.join("s/state.ckpt"));
    // bytes 8..12 hold the format version
    bytes[8] = 2;
    fs::write(p.join("bad_version.ckpt"), bytes).unwrap();
    let o = ssod(p, &["eval", "--model", "bad_version.ckpt", "--data", "ds", "--out", "e"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 2"));
}

#[test]
fn simulate_prints_signed_deltas_and_is_reproducible() {
    let t = workspace();
    let p = t.path();
    let table = ok(p, &["--config", "small.conf", "simulate", "--mode", "in-domain", "--out", "a", "--jobs", "1"]);
    ok(p, &["--config", "small.conf", "simulate", "--mode", "in-domain", "--out", "b", "--jobs", "3"]);
    assert!(table.lines().any(|l| l.starts_with("mean") && (l.contains("(+") || l.contains("(-"))), "{table}");
    for f in ["run_record.json", "comparison.txt", "pr_curves.csv", "epochs.csv", "summary.csv", "calibration.csv"] {
        assert_eq!(read(p.join("a").join(f)), read(p.join("b").join(f)), "{f}");
    }
    assert_eq!(String::from_utf8(read(p.join("a/comparison.txt"))).unwrap(), table);
    let pr = String::from_utf8(read(p.join("a/pr_curves.csv"))).unwrap();
    assert!(pr.starts_with("replication,arm,class,confidence,recall,precision\n") && pr.lines().count() > 1);
}

#[test]
fn cross_domain_simulate_accepts_a_new_domain_directory() {
    let t = workspace();
    let p = t.path();
    let conf = format!("{SMALL}shift.enabled = true\nn_shifted = 30\n");
    fs::write(p.join("shift.conf"), conf).unwrap();
    ok(p, &["--config", "shift.conf", "synth", "--out", "new", "--domain", "shifted"]);
    ok(p, &["--config", "small.conf", "simulate", "--mode", "cross-domain", "--out", "x", "--new-domain", "new"]);
    let rec = RunRecord::from_json(&String::from_utf8(read(p.join("x/run_record.json"))).unwrap()).unwrap();
    assert!(rec.replications.iter().all(|r| r.n_unlabeled == 30));
    let m: serde_json::Value = serde_json::from_slice(&read(p.join("x/manifest.json"))).unwrap();
    assert_eq!(m["datasets"].as_array().unwrap().len(), 1 + 1);
}
