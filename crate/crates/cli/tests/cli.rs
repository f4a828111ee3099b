use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simdist"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture_config() -> PathBuf {
    manifest().join("../core/tests/fixtures/microdata/config.json")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A short synthetic run so debug-mode tests stay quick.
fn write_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "data": {"source": "synthetic", "synthetic": {"countries": 6, "questions": 16, "q2_questions": 3, "q3_questions": 4}},
        "backend": {"kind": "toy_embedding"},
        "train": {"learning_rate": 0.02, "max_epochs": 15, "early_stop_metric": "train_loss", "patience": 5},
        "eval": {"seed": 3}
    });
    if let (Some(base), Some(extra)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in extra {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = run(&["frobnicate", "--config", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (json!({"data": {"source": "synthetic"}, "train": {"learning_rat": 0.1}}), "train.learning_rat"),
        (json!({"data": {"source": "synthetic"}, "train": {"batch_size": "many"}}), "train.batch_size"),
        (json!({"data": {"source": "microdata", "codebook": "c.json"}, "splits": {"c2": [], "c3": [], "q2": [], "q3": []}}), "data.raw"),
        (json!({"data": {"source": "synthetic"}, "eval": {"formats": ["pdf"]}}), "eval.formats[0]"),
    ];
    for (i, (cfg, field)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&path, cfg.to_string()).unwrap();
        let out = run(&["train", "--config", path_str(&path), "--output-dir", path_str(dir.path())]);
        assert_eq!(out.status.code(), Some(2), "{cfg}");
        assert!(stderr(&out).contains(field), "expected {field} in {}", stderr(&out));
    }
}

#[test]
fn runtime_failure_exits_one_with_log_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"backend": {"kind": "real_lm", "model": "tiny-instruct"}}));
    let out_dir = dir.path().join("out");
    let out = run(&["eval", "--config", path_str(&cfg), "--output-dir", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("see log:"), "{err}");
    let log = std::fs::read_to_string(out_dir.join("logs/eval.log")).unwrap();
    assert!(log.contains("real_lm"), "{log}");
}

#[test]
fn build_data_on_fixture_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["build-data", "--config", path_str(&fixture_config()), "--output-dir", path_str(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));

    let expected: Value = serde_json::from_str(
        &std::fs::read_to_string(manifest().join("../core/tests/fixtures/microdata/expected_counts.json")).unwrap(),
    )
    .unwrap();
    let text = stdout(&out);
    let printed: BTreeMap<String, u64> = text
        .lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            Some((parts.next()?.to_string(), parts.next()?.parse().ok()?))
        })
        .collect();
    let subsets = expected["subsets"].as_object().unwrap();
    for (name, n) in subsets {
        assert_eq!(printed.get(name).copied(), n.as_u64(), "{name} in {text}");
    }

    let dataset = std::fs::read_to_string(dir.path().join("data/dataset.jsonl")).unwrap();
    let total: u64 = subsets.values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(dataset.lines().count() as u64, total);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["set_sizes"], expected["set_sizes"]);
}

fn pipeline(config: &Path, out_dir: &Path) {
    for cmd in ["build-data", "train", "eval"] {
        let out = run(&[cmd, "--config", path_str(config), "--output-dir", path_str(out_dir)]);
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let single = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let cfg_single = write_config(single.path(), json!({"eval": {"seed": 3, "threads": 1}}));
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), single.path().join("c"));
    pipeline(&cfg, &a);
    pipeline(&cfg, &b);
    pipeline(&cfg_single, &c);
    for file in ["data/dataset.jsonl", "train/adapter.json", "eval/predictions.jsonl", "eval/results.csv", "eval/report.md"] {
        let first = std::fs::read(a.join(file)).unwrap();
        assert!(!first.is_empty(), "{file} is empty");
        assert_eq!(first, std::fs::read(b.join(file)).unwrap(), "{file} differs between runs");
        if file != "eval/report.md" {
            assert_eq!(first, std::fs::read(c.join(file)).unwrap(), "{file} differs with one worker thread");
        }
    }
    let results = std::fs::read_to_string(a.join("eval/results.csv")).unwrap();
    assert!(results.contains("FT") && results.contains("ctrl"), "{results}");
}

#[test]
fn eval_without_adapter_marks_ft_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = run(&["eval", "--config", path_str(&cfg), "--output-dir", path_str(dir.path()), "--variants", "normal"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("eval/report.md")).unwrap();
    assert!(report.contains("| FT | n/a"), "{report}");
    assert!(!report.contains("| ZS [ctrl] |"), "{report}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = run(&["build-data", "--config", path_str(&cfg), "--output-dir", path_str(dir.path()), "--seed", "11"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&["eval", "--config", path_str(&cfg), "--output-dir", path_str(dir.path()), "--seed", "11"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/run_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["eval"]["seed"], 11);
    assert_eq!(meta["config"]["train"]["seed"], 11);
}

#[test]
fn ablate_trains_one_adapter_per_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"backend": {"kind": "toy_table"}}));
    let out = run(&["ablate", "--config", path_str(&cfg), "--output-dir", path_str(dir.path()), "--losses", "KL,JS,WA,CE"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for loss in ["KL", "JS", "WA", "CE"] {
        let log = std::fs::read_to_string(dir.path().join(format!("ablate/{loss}/training_log.jsonl"))).unwrap();
        assert!(log.contains(&format!("\"loss\":\"{loss}\"")), "{loss} log lacks its config");
        assert!(log.contains("\"event\":\"end\""));
    }
    let report = std::fs::read_to_string(dir.path().join("ablate/report.md")).unwrap();
    assert!(report.contains("| | C1-Q3 | C2-Q1 | C2-Q3 | C3-Q1 | C3-Q3 | Avg. |"), "{report}");
    for row in ["| FT-KL |", "| FT-JS |", "| FT-WA |", "| FT-CE |"] {
        assert!(report.contains(row), "{row} missing");
    }
}

#[test]
fn baseline_counts_json_failures_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = run(&[
        "baseline",
        "--config",
        path_str(&cfg),
        "--output-dir",
        path_str(dir.path()),
        "--predictors",
        "knn,avg_culture,json_zs,uniform",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let results = std::fs::read_to_string(dir.path().join("baseline/results.csv")).unwrap();
    for id in ["Avg_Culture", "Uniform"] {
        assert_eq!(results.lines().filter(|l| l.starts_with(id)).count(), 5, "{id}: {results}");
    }
    // neighbours with a different option count are skipped, so held-out questions may leave KNN cells empty
    assert!(results.lines().any(|l| l.starts_with("KNN,C2-Q1")), "{results}");
    let report = std::fs::read_to_string(dir.path().join("baseline/report.md")).unwrap();
    assert!(report.contains("| JSON-ZS | n/a"), "{report}");
}

#[test]
fn report_rerenders_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({}));
    let out = run(&["eval", "--config", path_str(&cfg), "--output-dir", path_str(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let eval_dir = dir.path().join("eval");
    let results = std::fs::read(eval_dir.join("results.csv")).unwrap();
    let predictions = std::fs::read(eval_dir.join("predictions.jsonl")).unwrap();
    std::fs::remove_file(eval_dir.join("report.md")).unwrap();

    let out = run(&["report", "--config", path_str(&cfg), "--output-dir", path_str(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(eval_dir.join("results.csv")).unwrap(), results);
    assert_eq!(std::fs::read(eval_dir.join("predictions.jsonl")).unwrap(), predictions);
    let report = std::fs::read_to_string(eval_dir.join("report.md")).unwrap();
    assert!(report.starts_with("# Evaluation"), "{report}");
    assert!(report.contains("| ZS [ctrl] |"), "{report}");
}

#[test]
fn shipped_configs_parse() {
    for name in ["synthetic.json", "wvs.json"] {
        let path = manifest().join("../../configs").join(name);
        let text = std::fs::read_to_string(&path).unwrap();
        simdist_core::RunConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
