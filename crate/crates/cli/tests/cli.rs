use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn emg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emg-snn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = emg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small network and dataset so training runs in well under a second.
fn tiny_config(dir: &Path, extra_neuron: &str) -> String {
    let text = format!(
        r#"{{"data":{{"per_class":6}},"topology":{{"m_lif":4,"n_dexat":6}},"train":{{"epochs":3}},"neuron":{{{extra_neuron}}}}}"#
    );
    fs::write(dir.join("tiny.json"), text).unwrap();
    "tiny.json".into()
}

#[test]
fn synth_writes_300_recordings_and_a_checked_manifest() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--out", "s"]);
    let recs: Vec<_> = fs::read_dir(tmp.path().join("s/recordings")).unwrap().collect();
    assert_eq!(recs.len(), 300);

    let manifest = read_json(tmp.path().join("s/manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 301, "300 recordings plus the config echo");
    for f in files {
        let bytes = fs::read(tmp.path().join("s").join(f["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        assert_eq!(f["sha256"].as_str().unwrap(), digest);
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--per-class", "2", "--seed", "4", "--out", "a"]);
    ok(tmp.path(), &["synth", "--per-class", "2", "--seed", "4", "--out", "b"]);
    ok(tmp.path(), &["synth", "--per-class", "2", "--seed", "5", "--out", "c"]);
    let read = |d: &str| fs::read(tmp.path().join(d).join("recordings/scissors_0001.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(
        fs::read(tmp.path().join("a/manifest.json")).unwrap(),
        fs::read(tmp.path().join("b/manifest.json")).unwrap()
    );
}

#[test]
fn encode_writes_72_rows_and_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--per-class", "1", "--out", "s"]);
    let rec = "s/recordings/paper_0000.csv";
    ok(tmp.path(), &["encode", rec, "--out", "e1"]);
    ok(tmp.path(), &["encode", rec, "--out", "e2"]);
    let a = fs::read_to_string(tmp.path().join("e1/raster.txt")).unwrap();
    assert_eq!(a.lines().count(), 72);
    assert!(a.lines().all(|l| l.len() == 200));
    assert!(a.contains('1'));
    assert_eq!(a, fs::read_to_string(tmp.path().join("e2/raster.txt")).unwrap());

    ok(tmp.path(), &["encode", rec, "--start", "50", "--len", "20", "--out", "e3"]);
    let part = fs::read_to_string(tmp.path().join("e3/raster.txt")).unwrap();
    assert!(part.lines().all(|l| l.len() == 20));
}

#[test]
fn zero_signal_encodes_to_all_zero_raster() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("# channels=8 rate=200 label=0 subject=\n");
    for _ in 0..30 {
        csv.push_str("0,0,0,0,0,0,0,0\n");
    }
    fs::write(tmp.path().join("zero.csv"), csv).unwrap();
    ok(tmp.path(), &["encode", "zero.csv", "--out", "e"]);
    let raster = fs::read_to_string(tmp.path().join("e/raster.txt")).unwrap();
    assert_eq!(raster.lines().count(), 72);
    assert!(raster.chars().all(|c| c == '0' || c == '\n'));
}

#[test]
fn zero_learning_rate_gives_flat_history() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    ok(tmp.path(), &["--config", &cfg, "train", "--lr", "0", "--out", "t"]);
    let history = fs::read_to_string(tmp.path().join("t/history.csv")).unwrap();
    let rows: Vec<Vec<f64>> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        assert_eq!(r[1], rows[0][1], "train accuracy moved");
        assert_eq!(r[2], rows[0][2], "test accuracy moved");
        assert!((r[3] - rows[0][3]).abs() < 1e-12, "loss moved");
    }
    assert_eq!(
        fs::read(tmp.path().join("t/final.bin")).unwrap(),
        fs::read(tmp.path().join("t/best.bin")).unwrap()
    );
}

#[test]
fn seeded_training_rerun_is_bit_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    for out in ["a", "b"] {
        ok(tmp.path(), &["--config", &cfg, "--seed", "11", "train", "--out", out]);
    }
    for file in ["history.csv", "final.bin", "final_quant8.bin"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(file)).unwrap(),
            fs::read(tmp.path().join("b").join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn default_topology_has_150_hidden_neurons() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("c.json"),
        r#"{"data":{"per_class":2},"train":{"epochs":1}}"#,
    )
    .unwrap();
    let out = ok(tmp.path(), &["--config", "c.json", "train", "--out", "t"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("50 LIF + 100 DEXAT"));
    let summary = read_json(tmp.path().join("t/summary.json"));
    assert_eq!(summary["hidden_neurons"], 150);
}

#[test]
fn config_echo_holds_defaults_and_overrides() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["--seed", "9", "maphw", "--vth", "4096", "--out", "m"]);
    let cfg = read_json(tmp.path().join("m/config.json"));
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["train"]["seed"], 9);
    assert_eq!(cfg["hw"]["vth_fixed"], 4096);
    assert_eq!(cfg["train"]["epochs"], 450);
    assert_eq!(cfg["train"]["batch_size"], 16);
    assert_eq!(cfg["topology"]["m_lif"], 50);
    assert_eq!(cfg["topology"]["n_dexat"], 100);
    assert_eq!(cfg["encoder"]["levels"], 4);
    assert_eq!(cfg["bench"]["batch_sizes"], serde_json::json!([1, 50]));
    assert_eq!(cfg["bench"]["repeats"], 5);

    // The echo is itself a valid config that reproduces the run.
    ok(tmp.path(), &["--config", "m/config.json", "maphw", "--out", "m2"]);
    assert_eq!(
        fs::read(tmp.path().join("m/mapping.csv")).unwrap(),
        fs::read(tmp.path().join("m2/mapping.csv")).unwrap()
    );
}

#[test]
fn eval_reports_agreement_between_backends() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    ok(tmp.path(), &["--config", &cfg, "train", "--out", "t"]);
    for backend in ["float", "quant", "hw"] {
        let out = format!("ev_{backend}");
        ok(
            tmp.path(),
            &["--config", &cfg, "eval", "t/final.bin", "--backend", backend, "--out", &out],
        );
        let report = read_json(tmp.path().join(&out).join("eval.json"));
        assert_eq!(report["backend"], backend);
        let agreement = report["agreement_with_float"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&agreement));
        let confusion: u64 = report["confusion"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|r| r.as_array().unwrap())
            .map(|v| v.as_u64().unwrap())
            .sum();
        assert_eq!(confusion, report["windows"].as_u64().unwrap());
        if backend == "float" {
            assert_eq!(agreement, 1.0);
        }
    }
}

#[test]
fn eval_on_empty_dataset_is_a_domain_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    ok(tmp.path(), &["--config", &cfg, "train", "--out", "t"]);
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = emg(
        tmp.path(),
        &["--config", &cfg, "eval", "t/final.bin", "--data", "empty", "--out", "e"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset is empty"));
}

#[test]
fn hw_backend_refuses_unmappable_parameters() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), r#""dexat":{"beta1":8.0}"#);
    ok(tmp.path(), &["--config", &cfg, "train", "--epochs", "1", "--out", "t"]);
    let out = emg(
        tmp.path(),
        &["--config", &cfg, "eval", "t/final.bin", "--backend", "hw", "--out", "e"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma1"));
    ok(
        tmp.path(),
        &["--config", &cfg, "eval", "t/final.bin", "--backend", "quant", "--out", "q"],
    );
}

#[test]
fn bench_writes_schema_checked_csvs() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    ok(tmp.path(), &["--config", &cfg, "bench", "--out", "b"]);
    let latency = fs::read_to_string(tmp.path().join("b/latency.csv")).unwrap();
    let mut lines = latency.lines();
    assert_eq!(
        lines.next().unwrap(),
        "runnable,backend,batch,repeats,phase,mean_s,std_s"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 7 && r[3] == "5"));
    let batches: Vec<&str> = rows.iter().filter(|r| r[4] == "total").map(|r| r[2]).collect();
    assert_eq!(batches, ["1", "50"]);

    let ops = fs::read_to_string(tmp.path().join("b/ops.csv")).unwrap();
    let header: Vec<&str> = ops.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "window");
    assert!(header.contains(&"synaptic_ops") && header.contains(&"total_ops"));
    assert_eq!(ops.lines().count(), 11);
    assert!(ops.lines().skip(1).all(|l| l.split(',').count() == header.len()));
    let energy = fs::read_to_string(tmp.path().join("b/energy.txt")).unwrap();
    assert!(energy.contains("0.37 mJ"));

    ok(tmp.path(), &["--config", &cfg, "bench", "--backend", "hw", "--batch", "3", "--repeats", "1", "--out", "h"]);
}

#[test]
fn maphw_default_grid_marks_large_gamma_invalid() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["maphw", "--out", "m"]);
    let csv = fs::read_to_string(tmp.path().join("m/mapping.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 8 * 8);
    let mut large = 0;
    for r in &rows {
        let gamma: f64 = r[0].parse().unwrap();
        if gamma >= 256.0 {
            large += 1;
            assert_eq!(r[3], "0", "cell {r:?}");
        }
        if r[3] == "1" {
            let g: i64 = r[4].parse().unwrap();
            assert!((1..=255).contains(&g));
        }
    }
    assert!(large > 0);
}

#[test]
fn maphw_grid_size_is_product_of_axes() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("one.json"),
        r#"{"mapping":{"tau_a":[100.0],"beta":[1.0]}}"#,
    )
    .unwrap();
    ok(tmp.path(), &["--config", "one.json", "maphw", "--out", "one"]);
    let csv = fs::read_to_string(tmp.path().join("one/mapping.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    fs::write(
        tmp.path().join("grid.json"),
        r#"{"mapping":{"tau_a":[5.0,50.0,500.0],"beta":[0.5,1.0,2.0,4.0,8.0]}}"#,
    )
    .unwrap();
    ok(tmp.path(), &["--config", "grid.json", "maphw", "--out", "grid"]);
    let csv = fs::read_to_string(tmp.path().join("grid/mapping.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 5);
}

#[test]
fn usage_and_config_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(emg(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(emg(tmp.path(), &["eval"]).status.code(), Some(1));
    fs::write(tmp.path().join("bad.json"), r#"{"train":{"epochz":3}}"#).unwrap();
    let out = emg(tmp.path(), &["--config", "bad.json", "maphw"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    fs::write(tmp.path().join("neg.json"), r#"{"train":{"learning_rate":-1.0}}"#).unwrap();
    assert_eq!(emg(tmp.path(), &["--config", "neg.json", "maphw"]).status.code(), Some(1));
    assert_eq!(emg(tmp.path(), &["--config", "missing.json", "maphw"]).status.code(), Some(1));
    assert_eq!(emg(tmp.path(), &["--help"]).status.code(), Some(0));
}
