use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn d3a(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d3a")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = d3a(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--static", "6", "--dynamic", "2", "--hours", "1", "--seed", "3", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_frame_count_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["simulate", "--static", "1", "--dynamic", "0", "--hours", "0.1", "--seed", "7", "--out", p(dir)]);
    }
    assert_eq!(json(&a.join("stream.json"))["frame_count"], 46);
    for f in ["frames.jsonl", "gt.jsonl", "stream.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let run = json(&a.join("run.json"));
    assert_eq!(run["seed"], 7);
    assert_eq!(run["world_spec"]["n_static"], 1);
}

#[test]
fn simulate_usage_and_infeasible_errors() {
    let out = d3a(&["simulate", "--static", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));

    let tmp = tempfile::tempdir().unwrap();
    let out = d3a(&["simulate", "--static", "5000", "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn ingest_echoes_config_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    simulate(&s, &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = ok(&["ingest", "--engine", "d3a", "--in", p(&s), "--out", p(&a)]);
    assert!(out.starts_with("d_thresh=0.5 window=10 cos=0.4 stm=400\n"), "{out}");
    ok(&["ingest", "--engine", "d3a", "--in", p(&s), "--out", p(&b)]);
    for f in ["manifest.json", "oic.jsonl", "stc.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let n = json(&s.join("stream.json"))["detection_count"].as_u64().unwrap();
    let out = ok(&["ingest", "--engine", "naive", "--in", p(&s), "--out", p(&tmp.path().join("n"))]);
    assert!(out.contains(&format!("oic_count={n}\n")), "{out}");

    let out = ok(&["ingest", "--engine", "d3a", "--in", p(&s), "--out", p(&tmp.path().join("c")), "--d-thresh", "0.8", "--stm-cap", "5"]);
    assert!(out.starts_with("d_thresh=0.8 window=10 cos=0.4 stm=5\n"));

    let bad = d3a(&["ingest", "--engine", "d3a", "--in", p(&s), "--out", p(&tmp.path().join("x")), "--window", "1"]);
    assert!(!bad.status.success());
    let missing = d3a(&["ingest", "--engine", "d3a", "--in", p(&tmp.path().join("none")), "--out", p(&tmp.path().join("y"))]);
    assert!(!missing.status.success());
}

#[test]
fn query_answers_and_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, st) = (tmp.path().join("s"), tmp.path().join("st"));
    simulate(&s, &["--noiseless"]);
    ok(&["ingest", "--engine", "d3a", "--in", p(&s), "--out", p(&st)]);

    let out = ok(&["query", "--store", p(&st), "--query", r#"{"kind":"Q1","precision":"perfect","targets":[{"object_id":1}]}"#, "--expect", "1"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["answers"][0]["object_id"], 1);
    assert_eq!(v["reciprocal_rank"], 1.0);
    assert!(v["retrieval_ms"].as_f64().unwrap() >= 0.0);
    assert!(v["evaluation_ms"].as_f64().is_some());

    let qfile = tmp.path().join("q.json");
    fs::write(&qfile, r#"{"kind":"Q1","precision":"category","targets":[{"category":"giraffe"}]}"#).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&["query", "--store", p(&st), "--query", p(&qfile)])).unwrap();
    assert_eq!(v["answers"], serde_json::json!([]));

    let out = d3a(&["query", "--store", p(&st), "--query", r#"{"kind":"Q3","precision":"any","targets":[{}],"time_range":[9,1]}"#]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("time_range"));

    let out = d3a(&["query", "--store", p(&st), "--query", r#"{"kind":"Q2","precision":"any","targets":[{}]}"#]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("targets"));

    let out = d3a(&["query", "--store", p(&st), "--query", r#"{"kind":"Q1","precision":"perfect","targets":[{"objectid":1}]}"#]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("objectid"));

    let stats: serde_json::Value = serde_json::from_str(&ok(&["stats", "--store", p(&st)])).unwrap();
    assert_eq!(stats["oic_count"], 8);
}

#[test]
fn bench_reports_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, out) = (tmp.path().join("s"), tmp.path().join("out"));
    simulate(&s, &[]);
    ok(&["bench", "--in", p(&s), "--out", p(&out), "--per-cell", "3", "--negatives", "2", "--sweep", "0,0.1,0.2,0.3,0.4,0.5"]);
    let report = json(&out.join("report.json"));
    assert_eq!(report["engines"].as_array().unwrap().len(), 3);
    assert_eq!(report["suite_size"], 29);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next(), Some("fpr,engine,mrr,miss_rate"));
    for engine in ["d3a", "naive", "nonspatial"] {
        assert_eq!(sweep.lines().filter(|l| l.split(',').nth(1) == Some(engine)).count(), 6);
    }
    for f in ["timing.json", "timing.csv", "queries_table.csv", "store_table.csv", "insertions.csv", "queries.jsonl", "run.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    for e in ["d3a", "naive", "nonspatial"] {
        assert!(out.join("stores").join(e).join("manifest.json").exists());
    }

    // replaying the query log reproduces the report
    let again = tmp.path().join("again");
    ok(&["bench", "--in", p(&s), "--out", p(&again), "--queries", p(&out.join("queries.jsonl"))]);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), fs::read(again.join("report.json")).unwrap());
}

#[test]
fn bench_rejects_mismatched_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let (s, other) = (tmp.path().join("s"), tmp.path().join("o"));
    simulate(&s, &[]);
    ok(&["simulate", "--static", "4", "--dynamic", "0", "--hours", "0.5", "--seed", "9", "--out", p(&other)]);
    let out = d3a(&["bench", "--in", p(&s), "--gt", p(&other.join("gt.jsonl")), "--out", p(&tmp.path().join("b"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ground truth"));
}
