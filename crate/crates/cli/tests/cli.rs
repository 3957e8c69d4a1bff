use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gmia_core::data::{cancer_like_schema, generate_cancer_like};
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 11
output_dir = "run"

[dataset]
kind = "cancer-like"
seed = 7

[protocol]
n_repeats = 2
n_references = 5

[protocol.training]
epochs = 20

[protocol.indirect]
n_candidates = 120
n_clusters = 15
max_opt_steps = 5
min_enhancing = 3

[toy]
models_per_side = 4
train_size = 60
"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), SMALL).unwrap();
        Sandbox { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Writes `name` as the small config with its dataset table replaced.
    fn config_with_dataset(&self, name: &str, dataset: &str) {
        let start = SMALL.find("[dataset]").unwrap();
        let end = SMALL.find("[protocol]").unwrap();
        let text = format!("{}[dataset]\n{dataset}\n\n{}", &SMALL[..start], &SMALL[end..]);
        fs::write(self.path(name), text).unwrap();
    }

    fn gmia(&self, args: &[&str]) -> Output {
        self.gmia_with("run.toml", args)
    }

    fn gmia_with(&self, config: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gmia"))
            .current_dir(self.dir.path())
            .env_remove("GMIA_OUTPUT_ROOT")
            .arg("-c")
            .arg(config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.gmia(args);
        assert!(out.status.success(), "gmia {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn fails(&self, args: &[&str]) -> String {
        let out = self.gmia(args);
        assert!(!out.status.success(), "gmia {args:?} unexpectedly succeeded");
        String::from_utf8(out.stderr).unwrap()
    }
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn target_pool(sb: &Sandbox) -> Vec<String> {
    let v: Value = serde_json::from_slice(&fs::read(sb.path("run/refs/partition.json")).unwrap()).unwrap();
    v["target_pool"].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

#[test]
fn train_refs_writes_k_models_and_refuses_rerun() {
    let sb = Sandbox::new();
    sb.ok(&["train-refs"]);
    let meta: Value = serde_json::from_slice(&fs::read(sb.path("run/refs/ensemble.json")).unwrap()).unwrap();
    assert_eq!(meta["k"], 5);
    for i in 0..5 {
        assert!(sb.path(&format!("run/refs/model-{i:03}.json")).is_file());
    }
    assert!(sb.path("run/refs/config.toml").is_file());

    let before = fs::read(sb.path("run/refs/model-000.json")).unwrap();
    let err = sb.fails(&["train-refs"]);
    assert!(err.contains("--force") && err.contains("refs"), "{err}");
    sb.ok(&["train-refs", "--force"]);
    assert_eq!(fs::read(sb.path("run/refs/model-000.json")).unwrap(), before);
}

#[test]
fn missing_dataset_is_reported_by_path() {
    let sb = Sandbox::new();
    sb.config_with_dataset("missing.toml", "kind = \"csv\"\npath = \"nowhere.csv\"\nschema = \"s.json\"");
    let out = sb.gmia_with("missing.toml", &["train-refs"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere.csv"), "{err}");
    assert!(!sb.path("run").exists());
}

#[test]
fn missing_config_file_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_gmia")).args(["-c", "/nonexistent/x.toml", "train-refs"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/x.toml"));
}

#[test]
fn csv_dataset_and_malformed_schema() {
    let sb = Sandbox::new();
    generate_cancer_like(3).write_csv(&sb.path("data.csv")).unwrap();
    fs::write(sb.path("schema.json"), serde_json::to_string(&cancer_like_schema()).unwrap()).unwrap();
    fs::write(sb.path("bad.json"), "{\"columns\": [").unwrap();
    sb.config_with_dataset("bad.toml", "kind = \"csv\"\npath = \"data.csv\"\nschema = \"bad.json\"");
    sb.config_with_dataset("good.toml", "kind = \"csv\"\npath = \"data.csv\"\nschema = \"schema.json\"");

    let out = sb.gmia_with("bad.toml", &["train-refs"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json"), "{err}");

    let out = sb.gmia_with("good.toml", &["train-refs"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snapshot = fs::read_to_string(sb.path("run/refs/config.toml")).unwrap();
    assert!(snapshot.contains("kind = \"csv\""));
}

#[test]
fn selection_outputs_one_row_per_candidate() {
    let sb = Sandbox::new();
    let err = sb.fails(&["select-targets"]);
    assert!(err.contains("train-refs"), "{err}");
    sb.ok(&["train-refs"]);

    let stdout = sb.ok(&["select-targets", "--beta", "0"]);
    assert!(stdout.starts_with("0 of 200"), "{stdout}");
    let rows = lines(&sb.path("run/select/verdicts.csv"));
    assert_eq!(rows.len(), 201);
    assert!(rows[1..].iter().all(|r| r.split(',').nth(3) == Some("false")));
    let snapshot = fs::read_to_string(sb.path("run/select/config.toml")).unwrap();
    assert!(snapshot.contains("beta = 0.0"), "{snapshot}");
}

#[test]
fn stale_reference_ensemble_is_rejected() {
    let sb = Sandbox::new();
    sb.ok(&["train-refs"]);
    let err = sb.fails(&["select-targets", "--seed", "12"]);
    assert!(err.contains("different configuration"), "{err}");
}

#[test]
fn direct_and_indirect_attacks() {
    let sb = Sandbox::new();
    sb.ok(&["train-refs"]);
    let record = target_pool(&sb)[0].clone();

    let err = sb.fails(&["attack", "--kind", "direct", "--record", "no-such-record"]);
    assert!(err.contains("no-such-record"), "{err}");
    let err = sb.fails(&["attack", "--kind", "direct", "--record", &record, "--model", "target-999"]);
    assert!(err.contains("target-999"), "{err}");

    sb.ok(&["attack", "--kind", "direct", "--record", &record, "--model", "target-001"]);
    let rows = lines(&sb.path("run/attack-direct/results.csv"));
    assert_eq!(rows.len(), 2, "{rows:?}");
    assert!(rows[1].starts_with(&format!("{record},target-001,direct,")));

    // No enhancing records on disk: the attack generates and stores them.
    sb.ok(&["attack", "--kind", "indirect", "--record", &record, "--model", "target-000,target-002"]);
    assert!(sb.path(&format!("run/attack-indirect/enhancing-{record}.csv")).is_file());
    let rows = lines(&sb.path("run/attack-indirect/results.csv"));
    assert!(rows.len() == 3 || rows.len() == 1, "{rows:?}");
}

#[test]
fn stored_enhancing_records_are_reused() {
    let sb = Sandbox::new();
    sb.ok(&["train-refs"]);
    let record = target_pool(&sb)[5].clone();
    sb.ok(&["gen-enhancing", "--record", &record]);
    assert!(sb.path(&format!("run/enhancing/{record}.csv")).is_file());
    assert_eq!(lines(&sb.path("run/enhancing/summary.csv")).len(), 2);
    sb.ok(&["attack", "--kind", "indirect", "--record", &record, "--model", "target-000"]);
    assert!(!sb.path(&format!("run/attack-indirect/enhancing-{record}.csv")).exists());
}

#[test]
fn gen_enhancing_without_records_needs_verdicts() {
    let sb = Sandbox::new();
    sb.ok(&["train-refs"]);
    let err = sb.fails(&["gen-enhancing"]);
    assert!(err.contains("verdicts.csv"), "{err}");
}

fn check_summary_schema(v: &Value) {
    assert_eq!(v["format"], "gmia-report/1");
    for key in ["dataset", "seed", "n_models", "delta", "beta", "selected", "curves", "accuracy", "empty", "notes"] {
        assert!(v.get(key).is_some(), "summary lacks `{key}`");
    }
    assert!(v["selected"].is_array() && v["notes"].is_array() && v["empty"].is_boolean());
    for key in ["train_mean", "train_sd", "test_mean", "test_sd"] {
        assert!(v["accuracy"][key].is_number());
    }
    for c in v["curves"].as_array().unwrap() {
        assert!(c["kind"].is_string() && c["rows"].is_number() && c["base_rate"].is_number());
        for p in c["points"].as_array().unwrap() {
            for key in ["cutoff", "tp", "fp", "members", "recall"] {
                assert!(p[key].is_number(), "curve point lacks `{key}`");
            }
            assert!(p["precision"].is_number() || p["precision"].is_null());
        }
    }
}

fn report_bytes(dir: &Path) -> Vec<Vec<u8>> {
    ["report.csv", "summary.json", "curve.csv"].iter().map(|f| fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn evaluate_is_replayable_and_independent_of_jobs() {
    let sb = Sandbox::new();
    sb.ok(&["evaluate", "--jobs", "1", "--set", "protocol.selection.beta=0.5", "--kinds", "direct,indirect"]);
    let summary: Value = serde_json::from_slice(&fs::read(sb.path("run/evaluate/summary.json")).unwrap()).unwrap();
    check_summary_schema(&summary);
    let first = report_bytes(&sb.path("run/evaluate"));

    sb.ok(&["evaluate", "--jobs", "4", "--force", "--set", "protocol.selection.beta=0.5", "--kinds", "direct,indirect"]);
    assert_eq!(report_bytes(&sb.path("run/evaluate")), first);

    // Replay from the snapshot into a different directory.
    fs::copy(sb.path("run/evaluate/config.toml"), sb.path("snapshot.toml")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gmia"))
        .current_dir(sb.dir.path())
        .env_remove("GMIA_OUTPUT_ROOT")
        .args(["-c", "snapshot.toml", "--out", "replay", "evaluate"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report_bytes(&sb.path("replay/evaluate")), first);
}

#[test]
fn toy_preset_and_output_root() {
    let sb = Sandbox::new();
    let root = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gmia"))
        .current_dir(sb.dir.path())
        .env("GMIA_OUTPUT_ROOT", root.path())
        .args(["-c", "run.toml", "evaluate", "--preset", "toy"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let toy: Value = serde_json::from_slice(&fs::read(root.path().join("run/toy/toy.json")).unwrap()).unwrap();
    assert_eq!(toy["outlier"]["record_id"], "toy-outlier");
    assert_eq!(toy["outlier"]["in_values"].as_array().unwrap().len(), 4);
    assert!(root.path().join("run/toy/histogram.csv").is_file());
    assert!(!sb.path("run").exists());

    sb.ok(&["toy-demo"]);
    assert_eq!(fs::read(sb.path("run/toy/toy.json")).unwrap(), fs::read(root.path().join("run/toy/toy.json")).unwrap());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let sb = Sandbox::new();
    let err = sb.fails(&["train-refs", "--set", "protocl.n_repeats=3"]);
    assert!(err.contains("protocl"), "{err}");
    let err = sb.fails(&["train-refs", "--set", "protocol.training.epochz=3"]);
    assert!(err.contains("epochz"), "{err}");
}
