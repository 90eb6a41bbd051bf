use std::path::Path;
use std::process::{Command, Output};

use allqa::data::{synthetic_records, write_synthetic, SyntheticSpec, SyntheticTask};
use serde_json::Value;

fn allqa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_allqa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run allqa")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn write_data(dir: &Path) {
    let spec = |n, seed| SyntheticSpec {
        context_len: 12,
        ..SyntheticSpec::new(n, seed)
    };
    for (name, n, seed) in [("train.jsonl", 40, 1), ("dev.jsonl", 20, 2)] {
        let mut records = synthetic_records(&spec(n, seed), SyntheticTask::A).unwrap();
        records.extend(synthetic_records(&spec(n, seed), SyntheticTask::B).unwrap());
        write_synthetic(&dir.join(name), &records).unwrap();
    }
}

/// A trained 2x2 all-purpose checkpoint in `ck/`.
fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    write_data(tmp.path());
    ok(allqa(
        &[
            "train", "--task", "all", "--data-dir", ".", "--out", "ck", "--epochs", "1", "--sequence-length", "96",
            "--hidden", "16", "--seed", "3",
        ],
        tmp.path(),
    ));
    tmp
}

fn metrics(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn train_prints_resolved_config_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    write_data(tmp.path());
    std::fs::write(tmp.path().join("hp.json"), r#"{"epochs": 3, "learning_rate": 0.002, "hidden": 16}"#).unwrap();
    let o = ok(allqa(
        &[
            "train", "--task", "all", "--data-dir", ".", "--config", "hp.json", "--epochs", "1", "--out", "ck",
            "--sequence-length", "40",
        ],
        tmp.path(),
    ));
    let err = stderr(&o);
    assert!(err.contains("\"seed\":0"), "{err}");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ck/train_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["epochs"], 1);
    assert_eq!(report["config"]["learning_rate"], 0.002);
    assert_eq!(report["config"]["hidden"], 16);
    assert_eq!(report["epochs"].as_array().unwrap().len(), 1);
    assert!(report.get("wall_clock_secs").is_none());

    std::fs::write(tmp.path().join("bad.json"), r#"{"epoch": 3}"#).unwrap();
    let o = allqa(&["train", "--task", "all", "--data-dir", ".", "--config", "bad.json", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn missing_data_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = allqa(&["train", "--task", "squad", "--data-dir", "missing/", "--out", "ck"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing"));
}

#[test]
fn eval_masks() {
    let tmp = setup();
    let dir = tmp.path();
    let plain = ok(allqa(&["eval", "--ckpt", "ck", "--data", "dev.jsonl"], dir));
    let empty = ok(allqa(&["eval", "--ckpt", "ck", "--data", "dev.jsonl", "--mask", ""], dir));
    assert_eq!(plain.stdout, empty.stdout);
    let m = metrics(&plain);
    assert_eq!(m["n"], 40);

    let one = ok(allqa(&["eval", "--ckpt", "ck", "--data", "dev.jsonl", "--mask", "0:1"], dir));
    assert!(stderr(&one).contains("[[0,1]]"));
    assert_eq!(metrics(&one)["n"], 40);

    let bad = allqa(&["eval", "--ckpt", "ck", "--data", "dev.jsonl", "--mask", "9:0"], dir);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("9:0"), "{}", stderr(&bad));

    let boolq = ok(allqa(&["eval", "--ckpt", "ck", "--task", "boolq", "--data", "dev.jsonl"], dir));
    assert_eq!(metrics(&boolq)["n"], 20);
}

#[test]
fn rank_compare_plot_workflow() {
    let tmp = setup();
    let dir = tmp.path();
    ok(allqa(
        &["rank-heads", "--ckpt", "ck", "--task", "squad", "--data", "dev.jsonl", "--jobs", "1", "--out", "a.csv"],
        dir,
    ));
    ok(allqa(
        &["rank-heads", "--ckpt", "ck", "--task", "boolq", "--data", "dev.jsonl", "--jobs", "2", "--out", "b.csv"],
        dir,
    ));
    let csv = std::fs::read_to_string(dir.join("a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().contains(",f1,"));
    assert!(std::fs::read_to_string(dir.join("b.csv")).unwrap().contains(",accuracy,"));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("a.layer_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["layers"].as_array().unwrap().len(), 2);

    let o = ok(allqa(&["compare", "--a", "a.csv", "--b", "b.csv", "--out", "report.json"], dir));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["comparison"]["top10pct_k"], 1);
    assert!(dir.join("report.json").is_file());

    ok(allqa(&["plot", "--in", "a.csv", "--out", "a.svg"], dir));
    let svg = std::fs::read_to_string(dir.join("a.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<rect").count() >= 4);

    let all = allqa(&["rank-heads", "--ckpt", "ck", "--task", "all", "--data", "dev.jsonl", "--out", "c.csv"], dir);
    assert_eq!(all.status.code(), Some(2));
}

#[test]
fn malformed_csv_names_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("bad.csv"),
        "layer,head,metric,baseline,masked,delta\n0,0,f1,1,1,0\n0,1,f1,1,1,zz\n",
    )
    .unwrap();
    for args in [
        vec!["plot", "--in", "bad.csv", "--out", "x.svg"],
        vec!["compare", "--a", "bad.csv", "--b", "bad.csv", "--out", "r.json"],
    ] {
        let o = allqa(&args, dir);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("bad.csv:3"), "{}", stderr(&o));
    }
}

#[test]
fn constant_zero_plot_is_single_colour() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut csv = String::from("layer,head,metric,baseline,masked,delta\n");
    for l in 0..2 {
        for h in 0..3 {
            csv.push_str(&format!("{l},{h},accuracy,50,50,0\n"));
        }
    }
    std::fs::write(dir.join("z.csv"), csv).unwrap();
    ok(allqa(&["plot", "--in", "z.csv", "--out", "z.svg"], dir));
    let svg = std::fs::read_to_string(dir.join("z.svg")).unwrap();
    let fills: Vec<&str> = svg.match_indices("fill=\"#").map(|(i, _)| &svg[i + 6..i + 13]).collect();
    assert_eq!(fills.len(), 6);
    assert!(fills.iter().all(|f| *f == "#ffffff"));
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out in ["1.jsonl", "2.jsonl"] {
        ok(allqa(&["synth", "--task", "B", "--n", "50", "--seed", "4", "--out", out], dir));
    }
    ok(allqa(&["synth", "--task", "B", "--n", "50", "--seed", "5", "--out", "3.jsonl"], dir));
    let read = |f: &str| std::fs::read(dir.join(f)).unwrap();
    assert_eq!(read("1.jsonl"), read("2.jsonl"));
    assert_ne!(read("1.jsonl"), read("3.jsonl"));
    assert_eq!(String::from_utf8(read("1.jsonl")).unwrap().lines().count(), 50);
}

#[test]
fn transfer_from_checkpoint() {
    let tmp = setup();
    let dir = tmp.path();
    let o = ok(allqa(
        &[
            "train", "--task", "boolq", "--data-dir", ".", "--init", "ck", "--out", "ck_b", "--epochs", "1",
            "--sequence-length", "40",
        ],
        dir,
    ));
    assert!(stderr(&o).contains("\"init\":\"ck\""));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("ck_b/train_report.json")).unwrap()).unwrap();
    assert_eq!(report["regime"], "boolean");
    assert!(!report["reinitialized"].as_array().unwrap().is_empty());
    let m = metrics(&ok(allqa(&["eval", "--ckpt", "ck_b", "--task", "boolq", "--data", "dev.jsonl"], dir)));
    assert!(m["accuracy"].is_number());
}

#[test]
fn bundled_fixtures_evaluate() {
    let tmp = setup();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    for (file, key) in [("boolq/dev.jsonl", "accuracy"), ("squad/dev-v2.0.json", "f1")] {
        let path = data.join(file);
        let o = ok(allqa(&["eval", "--ckpt", "ck", "--data", path.to_str().unwrap()], tmp.path()));
        let m = metrics(&o);
        assert_eq!(m["n"], 50);
        assert!(m[key].is_number());
    }
}
