use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use resonance_lab::config::{ExperimentConfig, Profile};
use resonance_lab::report::OOD_TABLE;
use resonance_core::posgen::Subtask;

fn lab(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_resonance-lab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn analyze_reports_split_and_lcm() {
    let text = stdout(&lab(&["analyze", "--d", "128", "--b", "10000", "--L", "4096", "--resonance"]));
    assert!(text.contains("critical pair index c = 46"), "{text}");
    assert!(text.contains("52 digits"), "{text}");

    let text = stdout(&lab(&["analyze", "--d", "64", "--L", "64"]));
    assert!(text.contains("critical pair index c = 9 ("), "{text}");
    assert!(text.contains("18 of 64 scalar dimensions"), "{text}");
}

#[test]
fn analyze_handles_a_single_pair() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("gap.json");
    let text = stdout(&lab(&["analyze", "--d", "2", "--L", "1", "--json", p(&json)]));
    assert!(text.contains("critical pair index c = 0"), "{text}");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["worst_ood"]["per_dim_worst_ood_gap"].as_array().unwrap().len(), 2);
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    lab(&["gen", "--subtask", "cot", "--train-len", "16", "--eval-len", "32", "--counts", "32,8,8", "--seed", "3", "--out", p(&data)]);
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let config = dir.path().join("tiny.json");
    let mut c = ExperimentConfig::profile(Profile::Reduced);
    c.model.d_model = 16;
    c.model.head_dim = 8;
    c.model.ffn_dim = 16;
    c.train.batch_size = 8;
    c.train.epochs = 2;
    fs::write(&config, c.to_json()).unwrap();
    let text = stdout(&lab(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&config), "--method", "yarn", "--resonance"]));
    assert!(text.contains("yarn_s4_res_L16/cot/seed-0:"), "{text}");
    for f in ["manifest.json", "metrics.jsonl", "best.json", "best.bin", "eval.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 2);

    let report = dir.path().join("eval.json");
    let text = stdout(&lab(&["eval", "--checkpoint", p(&run.join("best.json")), "--data", p(&data), "--json", p(&report)]));
    assert!(text.starts_with("8 sequences: OOD accuracy"), "{text}");
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    let fresh: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(saved["ood_accuracy"], fresh["ood_accuracy"]);
}

#[test]
fn repro_resumes_and_report_rebuilds_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut c = ExperimentConfig::profile(Profile::Reduced);
    c.task.subtasks = vec![Subtask::SemiRecursive];
    c.task.n_train = 16;
    c.task.n_val = 4;
    c.task.n_test = 4;
    c.model.d_model = 16;
    c.model.head_dim = 8;
    c.model.ffn_dim = 16;
    c.train.batch_size = 8;
    c.train.epochs = 1;
    c.scaling_specs.truncate(1);
    c.seeds = vec![0];
    c.output_dir = out.clone();
    let config = dir.path().join("c.json");
    fs::write(&config, c.to_json()).unwrap();

    let first = stdout(&lab(&["repro", "--config", p(&config)]));
    assert!(first.contains("trained 1, skipped 0"), "{first}");
    let table = fs::read(out.join(OOD_TABLE)).unwrap();

    let again = stdout(&lab(&["repro", "--config", p(&config)]));
    assert!(again.contains("trained 0, skipped 1"), "{again}");
    assert_eq!(fs::read(out.join(OOD_TABLE)).unwrap(), table);

    fs::remove_file(out.join(OOD_TABLE)).unwrap();
    lab(&["report", p(&out)]);
    assert_eq!(fs::read(out.join(OOD_TABLE)).unwrap(), table);

    let text = String::from_utf8(table).unwrap();
    let row = text.lines().nth(1).unwrap();
    // one seed: std is zero and nothing is missing
    assert!(row.starts_with("RoPE,rope,,,0,,,0,"), "{row}");
    assert!(row.ends_with(",0.00,1,"), "{row}");
}

#[test]
fn report_flags_missing_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::profile(Profile::Reduced);
    c.output_dir = dir.path().to_path_buf();
    fs::write(dir.path().join("experiment.json"), c.to_json()).unwrap();
    let out = lab(&["report", p(dir.path())]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
    let table = fs::read_to_string(dir.path().join(OOD_TABLE)).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().nth(1).unwrap().contains("recursive/seed-0;recursive/seed-1"));
}

#[test]
fn rejects_bad_input() {
    let out = Command::new(env!("CARGO_BIN_EXE_resonance-lab"))
        .args(["gen", "--subtask", "cot", "--counts", "1,2", "--out", "/nonexistent/x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_resonance-lab"))
        .args(["analyze", "--d", "3", "--L", "8"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
