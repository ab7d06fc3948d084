use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn margin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_margin"))
        .args(args)
        .current_dir(dir)
        .env_remove("MARGIN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_log(dir: &Path, name: &str, lines: &[&str]) {
    fs::write(dir.join(name), lines.join("\n") + "\n").unwrap();
}

#[test]
fn missing_log_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let o = margin(tmp.path(), &["replay", "--log", "missing.jsonl", "--phase1", "a", "--phase2", "b"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.jsonl"), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_one_before_work() {
    let tmp = TempDir::new().unwrap();
    for args in [
        vec!["verify", "--alpha", "1.5"],
        vec!["verify", "--bands", "0"],
        vec!["verify", "--shrinkage", "-1"],
        vec!["verify", "--theta", "2"],
        vec!["verify", "--prop", "7"],
        vec!["verify", "--no-such-flag"],
        vec!["dynamic-pool", "--scenario", "sideways", "--spec", "x.json"],
    ] {
        let o = margin(tmp.path(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    let o = margin(tmp.path(), &["verify", "--alpha-up", "1.5"]);
    assert!(stderr(&o).contains("alpha_up"));
    assert!(!tmp.path().join("margin-out").exists());
}

#[test]
fn verify_reports_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = margin(tmp.path(), &["verify", "--all", "--seed", "7", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["verify.json", "ushape.csv", "selection.csv", "tracking_bias.csv", "manifest.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(file)).unwrap(),
            fs::read(tmp.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn asymmetric_fixed_point_in_report() {
    let tmp = TempDir::new().unwrap();
    let o = margin(
        tmp.path(),
        &["verify", "--prop", "5", "--theta", "0.8", "--up", "0.02", "--down", "0.06", "--out", "v"],
    );
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("v/verify.json")).unwrap()).unwrap();
    let fp = report["asymmetric"]["predicted_fixed_point"].as_f64().unwrap();
    assert!((fp - 0.571).abs() < 5e-4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("57.14%"));
    assert!(report.get("convergence").is_none());
}

#[test]
fn failed_check_exits_two() {
    let tmp = TempDir::new().unwrap();
    let o = margin(tmp.path(), &["verify", "--prop", "2", "--replications", "2"]);
    assert_eq!(o.status.code(), Some(2));
    // reports are still written so the failure can be inspected
    assert!(tmp.path().join("margin-out/verify.json").exists());
}

#[test]
fn log_errors_name_the_line() {
    let tmp = TempDir::new().unwrap();
    write_log(
        tmp.path(),
        "bad.jsonl",
        &[
            r#"{"agent":"a","task":"t1","confidence":0.5,"correct":1,"phase":"p1"}"#,
            r#"{"agent":"a","task":"t2","confidence":1.5,"correct":1,"phase":"p2"}"#,
        ],
    );
    let o = margin(tmp.path(), &["replay", "--log", "bad.jsonl", "--phase1", "p1", "--phase2", "p2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.jsonl:2: field `confidence`"), "{}", stderr(&o));

    write_log(tmp.path(), "empty.jsonl", &[""]);
    let o = margin(tmp.path(), &["replay", "--log", "empty.jsonl", "--phase1", "p1", "--phase2", "p2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no observations"));

    write_log(
        tmp.path(),
        "onephase.jsonl",
        &[r#"{"agent":"a","task":"t1","confidence":0.5,"correct":1,"phase":"p1"}"#],
    );
    let o = margin(tmp.path(), &["replay", "--log", "onephase.jsonl", "--phase1", "p1", "--phase2", "p2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no records with phase p2"));
}

#[test]
fn config_file_sits_under_flags() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("cfg.json"), r#"{"alpha": 0.08, "bands": 5, "seed": 11}"#).unwrap();
    let o = margin(
        tmp.path(),
        &["verify", "--prop", "1", "--config", "cfg.json", "--bands", "4", "--out", "c"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("c/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["calibrator"]["alpha_up"], 0.08);
    assert_eq!(m["config"]["calibrator"]["band_count"], 4);
    assert_eq!(m["seed"], 11);

    fs::write(tmp.path().join("typo.json"), r#"{"alpah": 0.08}"#).unwrap();
    let o = margin(tmp.path(), &["verify", "--config", "typo.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpah"), "{}", stderr(&o));
}

#[test]
fn out_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_margin"))
        .args(["verify", "--prop", "1"])
        .current_dir(tmp.path())
        .env("MARGIN_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("from-env/verify.json").exists());
}

#[test]
fn replay_writes_reports_and_state() {
    let tmp = TempDir::new().unwrap();
    let mut lines = Vec::new();
    for t in 0..40 {
        let phase = if t < 20 { "p1" } else { "p2" };
        for (a, conf) in [("x", 0.9), ("y", 0.6)] {
            let correct = (t + a.len() * 3) % 3 != 0;
            let class = if correct { "ok".to_string() } else { format!("bad-{a}") };
            lines.push(format!(
                r#"{{"agent":"{a}","task":"t{t}","confidence":{conf},"correct":{},"answer_class":"{class}","phase":"{phase}"}}"#,
                u8::from(correct)
            ));
        }
    }
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    write_log(tmp.path(), "log.jsonl", &refs);
    let o = margin(
        tmp.path(),
        &["replay", "--log", "log.jsonl", "--phase1", "p1", "--phase2", "p2", "--shuffles", "5", "--resamples", "200"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("margin-out");
    for f in ["shift.json", "shift_per_shuffle.csv", "snapshot.json", "baselines.json", "reliability_raw.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("reliability_margin.csv")).unwrap();
    assert!(csv.starts_with("bin_low,bin_high,count,mean_conf,mean_acc\n"));
    let pool = margin::load_pool(&out.join("snapshot.json")).unwrap();
    assert_eq!(pool.len(), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains('%'));
}
