//! End-to-end tests that drive the compiled binary the way a shell user
//! would: real processes, real files, asserted exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_protoforest")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        stdout(output),
        stderr(output)
    );
}

fn read_json(path: &Path) -> Value {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

/// Tiny deterministic generator so the fixture CSV is identical on every run.
struct Lcg(u64);

impl Lcg {
    fn next_unit(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Three overlapping blobs, 24 rows each, four features, label column last.
fn write_dataset(path: &Path) {
    let mut rng = Lcg(0x2545_F491_4F6C_DD1D);
    let mut csv = String::from("f0,f1,f2,f3,species\n");
    for class in 0..3usize {
        for _ in 0..24 {
            for _ in 0..4 {
                let value = class as f64 * 6.0 + rng.next_unit() * 8.0;
                csv.push_str(&format!("{value:.4},"));
            }
            csv.push_str(["a", "b", "c"][class]);
            csv.push('\n');
        }
    }
    std::fs::write(path, csv).expect("write dataset");
}

/// A scratch directory holding the fixture CSV and an output directory.
struct Workspace {
    _dir: TempDir,
    data: PathBuf,
    out: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let data = dir.path().join("data.csv");
        let out = dir.path().join("out");
        write_dataset(&data);
        Workspace {
            _dir: dir,
            data,
            out,
        }
    }

    fn data(&self) -> &str {
        self.data.to_str().unwrap()
    }

    fn out(&self) -> &str {
        self.out.to_str().unwrap()
    }

    /// Run a subcommand with the fixture's --data/--label/--out filled in.
    fn run(&self, subcommand: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            subcommand,
            "--data",
            self.data(),
            "--label",
            "species",
            "--out",
            self.out(),
        ];
        args.extend_from_slice(extra);
        run(&args)
    }

    fn train(&self, extra: &[&str]) -> Output {
        let output = self.run("train", extra);
        assert_exit(&output, 0);
        output
    }
}

#[test]
fn train_writes_model_and_manifest() {
    let ws = Workspace::new();
    ws.train(&["--trees", "30"]);
    let model = std::fs::read(ws.out.join("model.json")).expect("model written");

    let manifest = read_json(&ws.out.join("manifest.json"));
    let entries = manifest.as_array().expect("manifest is an array");
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["command"], "train");
    assert!(entries[0]["created_unix_seconds"].as_u64().unwrap() > 0);
    assert_eq!(entries[0]["params"]["trees"], "30");

    // Same inputs, same bytes — and the manifest keeps appending.
    let ws2 = Workspace::new();
    ws2.train(&["--trees", "30"]);
    let model2 = std::fs::read(ws2.out.join("model.json")).expect("model written");
    assert_eq!(model, model2, "training is deterministic");

    ws.train(&["--trees", "10"]);
    let manifest = read_json(&ws.out.join("manifest.json"));
    assert_eq!(manifest.as_array().unwrap().len(), 2);
}

#[test]
fn missing_required_value_is_usage_error() {
    let ws = Workspace::new();
    let output = run(&["train", "--data", ws.data(), "--out", ws.out()]);
    assert_exit(&output, 2);
    assert!(stderr(&output).contains("missing --label"));
}

#[test]
fn unreadable_data_is_data_error() {
    let ws = Workspace::new();
    let output = run(&[
        "train",
        "--data",
        "/no/such/file.csv",
        "--label",
        "species",
        "--out",
        ws.out(),
    ]);
    assert_exit(&output, 3);
}

#[test]
fn malformed_csv_is_data_error() {
    let ws = Workspace::new();
    std::fs::write(&ws.data, "f0,f1,species\n1.0,2.0,a\n3.0,oops,b\n").unwrap();
    let output = ws.run("train", &["--trees", "5"]);
    assert_exit(&output, 3);
    assert!(stderr(&output).starts_with("error:"));
}

#[test]
fn select_fixed_k_returns_exactly_k() {
    let ws = Workspace::new();
    ws.train(&["--trees", "30"]);
    let output = ws.run("select", &["--algorithm", "sm-a", "--k", "5"]);
    assert_exit(&output, 0);
    assert!(stdout(&output).contains("stop: reached-k"));

    let protos = read_json(&ws.out.join("prototypes.json"));
    assert_eq!(protos["set"]["prototypes"].as_array().unwrap().len(), 5);
    assert_eq!(protos["set"]["algorithm"], "SM-A");
    assert_eq!(protos["trace"]["stop"], "reached-k");
    assert_eq!(protos["dataset_rows"].as_array().unwrap().len(), 5);
}

#[test]
fn adaptive_selection_records_its_stop_reason() {
    let ws = Workspace::new();
    ws.train(&["--trees", "30"]);
    let output = ws.run("select", &["--algorithm", "a-pete"]);
    assert_exit(&output, 0);

    let protos = read_json(&ws.out.join("prototypes.json"));
    let stop = protos["trace"]["stop"].as_str().unwrap();
    assert!(
        stop == "relative-change" || stop == "exhausted-reduction",
        "adaptive runs stop on the ratio test or exact coverage, got {stop}"
    );
    assert_eq!(protos["set"]["alpha"], 0.05);
    let count = protos["set"]["prototypes"].as_array().unwrap().len();
    assert!(count >= 1, "at least one prototype is always selected");
    assert!(stdout(&output).contains(&format!("selected {count} prototypes")));
}

#[test]
fn adaptive_selection_rejects_k() {
    let ws = Workspace::new();
    ws.train(&["--trees", "10"]);
    let output = ws.run("select", &["--algorithm", "a-pete", "--k", "5"]);
    assert_exit(&output, 2);
    assert!(stderr(&output).contains("--k applies only to sm-a/sm-wa"));
}

#[test]
fn fixed_k_selection_requires_k() {
    let ws = Workspace::new();
    ws.train(&["--trees", "10"]);
    let output = ws.run("select", &["--algorithm", "sm-a"]);
    assert_exit(&output, 2);
    assert!(stderr(&output).contains("needs --k"));

    let output = ws.run(
        "select",
        &["--algorithm", "sm-wa", "--k", "3", "--alpha", "0.1"],
    );
    assert_exit(&output, 2);
    assert!(stderr(&output).contains("--alpha applies only to a-pete"));
}

#[test]
fn tampered_model_version_is_incompatible() {
    let ws = Workspace::new();
    ws.train(&["--trees", "10"]);
    let mut model = read_json(&ws.out.join("model.json"));
    model["version"] = Value::from(99);
    std::fs::write(
        ws.out.join("model.json"),
        serde_json::to_vec(&model).unwrap(),
    )
    .unwrap();
    let output = ws.run("distances", &[]);
    assert_exit(&output, 4);
    assert!(stderr(&output).contains("version"));
}

#[test]
fn evaluate_rejects_prototypes_from_another_split() {
    let ws = Workspace::new();
    ws.train(&["--trees", "20"]);
    let output = ws.run("select", &["--algorithm", "sm-a", "--k", "4"]);
    assert_exit(&output, 0);
    // A different seed reshuffles the split, so the recorded leaf-assignment
    // hash no longer matches.
    let output = ws.run("evaluate", &["--seed", "7"]);
    assert_exit(&output, 4);
    assert!(stderr(&output).contains("different train split"));
}

#[test]
fn evaluate_writes_metrics_with_prototype_count() {
    let ws = Workspace::new();
    ws.train(&["--trees", "30"]);
    assert_exit(&ws.run("select", &["--algorithm", "sm-a", "--k", "4"]), 0);
    let output = ws.run("evaluate", &[]);
    assert_exit(&output, 0);
    assert!(
        stdout(&output).contains("(4)"),
        "accuracy line carries the prototype count"
    );
    assert!(stdout(&output).contains("test part"));

    let metrics = read_json(&ws.out.join("metrics.json"));
    assert_eq!(metrics["split"], "test");
    assert_eq!(metrics["surrogate"]["prototype_count"], 4);
    let formatted = metrics["formatted"].as_str().unwrap();
    assert!(
        formatted.ends_with(" (4)") && formatted.len() == "0.00 (4)".len(),
        "formatted entry is a two-decimal accuracy with the count: {formatted}"
    );
    let weighted = metrics["surrogate"]["weighted_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&weighted));

    // The validation part is addressable too.
    let output = ws.run("evaluate", &["--split", "valid"]);
    assert_exit(&output, 0);
    assert!(stdout(&output).contains("valid part"));
    assert_eq!(read_json(&ws.out.join("metrics.json"))["split"], "valid");
}

#[test]
fn explain_puts_the_instance_own_prototype_first() {
    let ws = Workspace::new();
    ws.train(&["--trees", "30"]);
    assert_exit(&ws.run("select", &["--algorithm", "sm-a", "--k", "6"]), 0);
    let protos = read_json(&ws.out.join("prototypes.json"));
    let row = protos["dataset_rows"][0].as_u64().unwrap();
    let row_arg = row.to_string();

    // Asking to explain a prototype's own row: distance zero, listed first,
    // and an oversized -m just means "all of them".
    let output = ws.run("explain", &["--instance", &row_arg, "--m", "100"]);
    assert_exit(&output, 0);

    let explanation = read_json(&ws.out.join(format!("explanation-{row}.json")));
    let same = explanation["same_class"].as_array().unwrap();
    assert_eq!(same[0]["dataset_row"].as_u64().unwrap(), row);
    assert_eq!(same[0]["distance"].as_f64().unwrap(), 0.0);
    for group in ["same_class", "other_class"] {
        let list = explanation[group].as_array().unwrap();
        for pair in list.windows(2) {
            assert!(
                pair[0]["distance"].as_f64().unwrap() <= pair[1]["distance"].as_f64().unwrap(),
                "{group} is sorted ascending by distance"
            );
        }
    }
    assert_eq!(
        explanation["surrogate_prediction"], explanation["same_class"][0]["class"],
        "the nearest prototype defines the surrogate's class"
    );
}

#[test]
fn explain_truncates_to_m() {
    let ws = Workspace::new();
    ws.train(&["--trees", "30"]);
    assert_exit(&ws.run("select", &["--algorithm", "sm-a", "--k", "6"]), 0);
    let output = ws.run("explain", &["--instance", "0", "--m", "1"]);
    assert_exit(&output, 0);
    let explanation = read_json(&ws.out.join("explanation-0.json"));
    assert!(explanation["same_class"].as_array().unwrap().len() <= 1);
    assert!(explanation["other_class"].as_array().unwrap().len() <= 1);
}

#[test]
fn explain_unknown_instance_is_data_error() {
    let ws = Workspace::new();
    ws.train(&["--trees", "10"]);
    assert_exit(&ws.run("select", &["--algorithm", "sm-a", "--k", "2"]), 0);
    let output = ws.run("explain", &["--instance", "9999"]);
    assert_exit(&output, 3);
    assert!(stderr(&output).contains("unknown instance 9999"));
}

#[test]
fn distance_matrix_is_cached_and_cache_can_be_bypassed() {
    let ws = Workspace::new();
    ws.train(&["--trees", "20"]);
    let first = ws.run("distances", &[]);
    assert_exit(&first, 0);
    assert!(stdout(&first).contains("(built)"));

    let second = ws.run("distances", &[]);
    assert_exit(&second, 0);
    assert!(stdout(&second).contains("(cached)"));

    let bypassed = ws.run("distances", &["--no-cache"]);
    assert_exit(&bypassed, 0);
    assert!(stdout(&bypassed).contains("(built)"));

    let with_csv = ws.run("distances", &["--csv"]);
    assert_exit(&with_csv, 0);
    assert!(ws.out.join("matrix.csv").exists());
}

#[test]
fn select_rejects_matrix_from_another_model() {
    let ws = Workspace::new();
    ws.train(&["--trees", "20"]);
    assert_exit(&ws.run("distances", &[]), 0);
    let matrix_path = std::fs::read_dir(&ws.out)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|x| x == "pfdm"))
        .expect("cached matrix file");

    // Retrain with a different tree count: the matrix no longer matches.
    ws.train(&["--trees", "25"]);
    let output = ws.run(
        "select",
        &[
            "--algorithm",
            "sm-a",
            "--k",
            "3",
            "--matrix",
            matrix_path.to_str().unwrap(),
        ],
    );
    assert_exit(&output, 4);
    assert!(stderr(&output).contains("different model, dataset, or split"));
}

#[test]
fn config_file_supplies_values_and_flags_win() {
    let ws = Workspace::new();
    let config_path = ws.data.parent().unwrap().join("run.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{"data": {:?}, "label": "species", "out": {:?}, "trees": 12}}"#,
            ws.data(),
            ws.out()
        ),
    )
    .unwrap();

    let output = run(&["--config", config_path.to_str().unwrap(), "train"]);
    assert_exit(&output, 0);
    assert!(stdout(&output).contains("trained 12 trees"));

    let output = run(&[
        "--config",
        config_path.to_str().unwrap(),
        "train",
        "--trees",
        "8",
    ]);
    assert_exit(&output, 0);
    assert!(
        stdout(&output).contains("trained 8 trees"),
        "explicit flag beats config"
    );

    let output = run(&["--config", "/no/such/config.json", "train"]);
    assert_exit(&output, 2);
}

#[test]
fn config_file_rejects_unknown_keys() {
    let ws = Workspace::new();
    let config_path = ws.data.parent().unwrap().join("typo.json");
    std::fs::write(&config_path, r#"{"tres": 12}"#).unwrap();
    let output = run(&[
        "--config",
        config_path.to_str().unwrap(),
        "train",
        "--data",
        ws.data(),
        "--label",
        "species",
        "--out",
        ws.out(),
    ]);
    assert_exit(&output, 2);
    assert!(stderr(&output).contains("tres"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let ws = Workspace::new();
    let output = ws.run(
        "sweep",
        &[
            "--trees",
            "15",
            "--feature-grid",
            "sqrt",
            "--k-grid",
            "2-3",
            "--alphas",
            "0.05",
            "--algorithms",
            "sm-a,a-pete",
        ],
    );
    assert_exit(&output, 0);

    let csv = std::fs::read_to_string(ws.out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "algorithm,feature_count,k,alpha,prototype_count,valid_weighted,valid_balanced,\
         valid_fidelity,test_weighted,test_balanced,test_fidelity"
    );
    let rows: Vec<&str> = lines.collect();
    // sm-a at k=2 and k=3, plus one adaptive cell.
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().filter(|r| r.starts_with("sm-a,")).count(), 2);
    assert_eq!(rows.iter().filter(|r| r.starts_with("a-pete,")).count(), 1);

    let report = read_json(&ws.out.join("sweep.json"));
    assert_eq!(report["cells"].as_array().unwrap().len(), 3);
    assert_eq!(report["best"].as_array().unwrap().len(), 2);
    for line in stdout(&output).lines() {
        if line.starts_with("sm-a:") || line.starts_with("a-pete:") {
            assert!(
                line.contains("valid weighted"),
                "per-algorithm summary: {line}"
            );
        }
    }
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let make = || {
        let ws = Workspace::new();
        ws.train(&["--trees", "25"]);
        assert_exit(&ws.run("distances", &[]), 0);
        assert_exit(&ws.run("select", &["--algorithm", "a-pete"]), 0);
        assert_exit(&ws.run("evaluate", &[]), 0);
        let read = |name: &str| std::fs::read(ws.out.join(name)).unwrap();
        (
            read("model.json"),
            read("prototypes.json"),
            read("metrics.json"),
        )
    };
    let (model_a, protos_a, metrics_a) = make();
    let (model_b, protos_b, metrics_b) = make();
    assert_eq!(model_a, model_b);
    assert_eq!(protos_a, protos_b);
    assert_eq!(metrics_a, metrics_b);
}
