use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "seed": 11,
  "use_case": "sbp2",
  "n_b": 16,
  "layout": { "sectors_per_site": 1 },
  "scale": { "n_drops": 2, "eval_drops": 1, "ues_per_sector": 3, "n_instants": 6 },
  "train": { "epochs": 2 }
}"#;

fn beampred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beampred")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let (data, weights, result, report) =
        (dir.path().join("data.json"), dir.path().join("model.json"), dir.path().join("result.json"), dir.path().join("report"));

    let out = beampred(&["generate-data", "--config", s(&cfg), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.exists());

    let out = beampred(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&weights)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = beampred(&[
        "evaluate", "--config", s(&cfg), "--weights", s(&weights), "--policies", "model,exhaustive-genie", "--out", s(&result),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("exhaustive-genie") && stdout.contains("top1 1.000"), "{stdout}");

    let out = beampred(&["report", "--results", s(&result), "--out", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(report.join("kpi.csv")).unwrap();
    assert!(csv.starts_with("label,metric,key,value"), "{csv}");
    assert!(csv.contains("evaluate/model,") && csv.contains("evaluate/exhaustive-genie,"), "{csv}");
    assert!(report.join("cdf_evaluate_model.txt").exists());
    assert!(report.join("summary.json").exists());
}

#[test]
fn override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let result = dir.path().join("r.json");
    let out = beampred(&[
        "simulate", "--config", s(&cfg), "--policies", "strongest-set-b", "--out", s(&result), "--scale.ues_per_sector=5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    // One sector, one drop, five UEs, six instants.
    assert_eq!(v["n_records"], 30);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let out_path = dir.path().join("x.json");

    let unknown_key = beampred(&["simulate", "--config", s(&cfg), "--out", s(&out_path), "--scale.no_such_field=3"]);
    assert_eq!(unknown_key.status.code(), Some(2));

    let bad_value = beampred(&["simulate", "--config", s(&cfg), "--out", s(&out_path), "--n_b=1000"]);
    assert_eq!(bad_value.status.code(), Some(2));

    let seedless = dir.path().join("seedless.json");
    std::fs::write(&seedless, r#"{"use_case": "sbp2"}"#).unwrap();
    let missing_seed = beampred(&["simulate", "--config", s(&seedless), "--out", s(&out_path)]);
    assert_eq!(missing_seed.status.code(), Some(2));

    let bad_policy = beampred(&["simulate", "--config", s(&cfg), "--policies", "oracle", "--out", s(&out_path)]);
    assert_eq!(bad_policy.status.code(), Some(2));

    assert_eq!(beampred(&["no-such-command"]).status.code(), Some(2));
    assert!(!out_path.exists());
}

#[test]
fn missing_files_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = beampred(&["simulate", "--config", s(&dir.path().join("absent.json")), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(4));

    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let out = beampred(&[
        "evaluate", "--config", s(&cfg), "--weights", s(&dir.path().join("absent-model.json")), "--out", s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(4));
}
