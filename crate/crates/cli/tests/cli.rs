use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn semloc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semloc")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = semloc(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn graph_file(dir: &Path, name: &str, nodes: &[([f64; 3], usize)]) -> PathBuf {
    let nodes: Vec<_> = nodes
        .iter()
        .enumerate()
        .map(|(i, (p, l))| serde_json::json!({"id": i, "label": l, "position": p, "size": 10}))
        .collect();
    let g = serde_json::json!({"labels": ["car", "tree"], "connectivity_threshold": 10.0, "nodes": nodes});
    let path = dir.join(name);
    fs::write(&path, g.to_string()).unwrap();
    path
}

#[test]
fn synthetic_pair_is_recovered() {
    let t = TempDir::new().unwrap();
    let out = ok(t.path(), &["synth", "--seed", "7", "--output", "s"]);
    assert!(out.contains("reference.json") && out.contains("ground_truth.json"), "paths are echoed: {out}");
    ok(t.path(), &["localize", "--reference", "s/reference.json", "--query", "s/query.json", "--ground-truth", "s/ground_truth.json", "--output", "l"]);
    let summary = json(t.path().join("l/summary.json"));
    assert!(summary["translation_error"].as_f64().unwrap() < 1e-6, "{summary}");
    assert!(summary["rotation_error_deg"].as_f64().unwrap().to_radians() < 1e-6);
    assert_eq!(summary["good_matches"]["rate"].as_f64(), Some(1.0));

    let matches = fs::read_to_string(t.path().join("l/matches.csv")).unwrap();
    assert!(matches.starts_with("idA,idB,label,score,inlier\n"));
    assert_eq!(matches.lines().count() - 1, summary["candidates"].as_u64().unwrap() as usize);
    let transform_txt = fs::read_to_string(t.path().join("l/transform.txt")).unwrap();
    assert_eq!(transform_txt.lines().count(), 4);
}

#[test]
fn identical_inputs_give_identity() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["synth", "--output", "s"]);
    ok(t.path(), &["localize", "--reference", "s/reference.json", "--query", "s/reference.json", "--output", "l"]);
    let tf = json(t.path().join("l/transform.json"));
    for r in 0..3 {
        for c in 0..3 {
            let expect = if r == c { 1.0 } else { 0.0 };
            assert!((tf["R"][r][c].as_f64().unwrap() - expect).abs() < 1e-9, "{tf}");
        }
        assert!(tf["t"][r].as_f64().unwrap().abs() < 1e-9, "{tf}");
    }
}

#[test]
fn point_files_are_clustered() {
    let t = TempDir::new().unwrap();
    // Six objects of five points each, 20 m apart; plus a lone noise point.
    let mut text = String::from("# x y z label\n");
    for k in 0..6 {
        for j in 0..5 {
            text += &format!("{} {} 0 {}\n", 20.0 * k as f64 + 0.1 * j as f64, (k % 2) as f64 * 7.0, k % 3);
        }
    }
    text += "500 500 0 1\n";
    fs::write(t.path().join("pts.txt"), text).unwrap();
    ok(t.path(), &["extract", "--input", "pts.txt", "--output", "x"]);
    let g = json(t.path().join("x/graph.json"));
    assert_eq!(g["nodes"].as_array().unwrap().len(), 6);
    assert!(g["nodes"].as_array().unwrap().iter().all(|n| n["size"] == 5));
    let csv = fs::read_to_string(t.path().join("x/descriptors.csv")).unwrap();
    assert!(csv.starts_with("node_id,cell_index,count\n"));

    // Dropping a label removes its nodes before the graph is built.
    ok(t.path(), &["extract", "--input", "pts.txt", "--drop-labels", "0", "--output", "y"]);
    assert_eq!(json(t.path().join("y/graph.json"))["nodes"].as_array().unwrap().len(), 4);
}

#[test]
fn malformed_input_is_a_parse_error_with_line() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("bad.txt"), "0 0 0 1\n# comment\n1 2 3\n").unwrap();
    let out = semloc(t.path(), &["extract", "--input", "bad.txt"]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[parse]") && err.contains("line 3"), "{err}");

    fs::write(t.path().join("bad.json"), "{\"labels\": [\"a\"],\n \"connectivity_threshold\": 10,\n \"nodes\": [{\"id\": 0, \"label\": 4, \"position\": [0,0,0], \"size\": 1}]}").unwrap();
    let out = semloc(t.path(), &["extract", "--input", "bad.json"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failure_categories_have_distinct_codes() {
    let t = TempDir::new().unwrap();
    let pair = graph_file(t.path(), "pair.json", &[([0.0, 0.0, 0.0], 0), ([5.0, 0.0, 0.0], 1)]);
    let out = semloc(t.path(), &["localize", "--reference", pair.to_str().unwrap(), "--query", pair.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[insufficient-candidates]"));

    let line: Vec<_> = (0..8).map(|i| ([6.0 * i as f64, 0.0, 0.0], 0)).collect();
    let line = graph_file(t.path(), "line.json", &line);
    let out = semloc(t.path(), &["localize", "--reference", line.to_str().unwrap(), "--query", line.to_str().unwrap()]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[degenerate-geometry]"));

    let blocker = t.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = semloc(t.path(), &["synth", "--output", "file/sub"]);
    assert_eq!(code(&out), 6);

    let out = semloc(t.path(), &["extract", "--input", "missing.txt"]);
    assert_eq!(code(&out), 6);

    let out = semloc(t.path(), &["synth", "--ransac-tol", "-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_precedence_three_layers() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("run.cfg"), "score_threshold = 0.6\nransac_iterations = 300\n").unwrap();
    let effective = ok(t.path(), &["config", "--config", "run.cfg", "--score-threshold", "0.7"]);
    let get = |k: &str| effective.lines().find_map(|l| l.strip_prefix(&format!("{k} = "))).unwrap().to_string();
    assert_eq!(get("score_threshold"), "0.7", "flag beats file");
    assert_eq!(get("ransac_iterations"), "300", "file beats default");
    assert_eq!(get("ransac_tolerance"), "5", "default survives");

    fs::write(t.path().join("typo.cfg"), "ransac_iteration = 300\n").unwrap();
    let out = semloc(t.path(), &["config", "--config", "typo.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn eval_pr_writes_one_row_per_threshold() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("pr.cfg"), "attempts = 20\npr_thresholds = 0,10,20,40,80,160\n").unwrap();
    ok(t.path(), &["eval-pr", "--config", "pr.cfg", "--output", "e"]);
    let pr = fs::read_to_string(t.path().join("e/pr.csv")).unwrap();
    assert_eq!(pr.lines().next(), Some("T_r,precision,recall,flagged"));
    assert_eq!(pr.lines().count(), 1 + 6);
    assert!(pr.lines().last().unwrap().ends_with(",0.000000,1"), "T_r 160 exceeds every inlier count: {pr}");
    let attempts = fs::read_to_string(t.path().join("e/attempts.csv")).unwrap();
    assert_eq!(attempts.lines().count(), 1 + 20);
}

#[test]
fn eval_pr_windows_multiply_attempts() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("pr.cfg"), "attempts = 3\nwindows = 3\nquery_length = 60\n").unwrap();
    ok(t.path(), &["eval-pr", "--config", "pr.cfg", "--output", "e"]);
    let attempts = fs::read_to_string(t.path().join("e/attempts.csv")).unwrap();
    assert_eq!(attempts.lines().count(), 1 + 9);
}

#[test]
fn bench_reports_each_stage() {
    let t = TempDir::new().unwrap();
    let stdout = ok(t.path(), &["bench", "--output", "b"]);
    assert!(stdout.contains("± "), "human-readable report: {stdout}");
    let report = json(t.path().join("b/timing.json"));
    assert_eq!(report["repetitions"], 5);
    let stages: Vec<_> = report["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap().to_string()).collect();
    assert_eq!(stages, ["graph", "descriptor", "matching", "pose"]);
    for s in report["stages"].as_array().unwrap().iter().chain([&report["total"]]) {
        assert_eq!(s["samples_ms"].as_array().unwrap().len(), 5);
        assert!(s["mean_ms"].as_f64().unwrap() >= 0.0 && s["std_ms"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn bench_accepts_trivial_inputs() {
    let t = TempDir::new().unwrap();
    let pair = graph_file(t.path(), "pair.json", &[([0.0, 0.0, 0.0], 0), ([5.0, 0.0, 0.0], 1)]);
    let p = pair.to_str().unwrap();
    ok(t.path(), &["bench", "--reference", p, "--query", p, "--output", "b"]);
    let report = json(t.path().join("b/timing.json"));
    assert!(report["outcome"].as_str().unwrap().contains("insufficient"), "{report}");
}

#[test]
fn outputs_are_deterministic_and_thread_independent() {
    let t = TempDir::new().unwrap();
    ok(t.path(), &["synth", "--seed", "21", "--output", "s"]);
    let run = |out: &str, threads: &str| {
        ok(t.path(), &["localize", "--threads", threads, "--descriptor", "walk", "--reference", "s/reference.json", "--query", "s/query.json", "--output", out]);
    };
    run("a", "1");
    run("b", "1");
    run("c", "3");
    for f in ["transform.json", "transform.txt", "matches.csv", "summary.json"] {
        let a = fs::read(t.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(t.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(t.path().join("c").join(f)).unwrap(), "{f} with 3 threads");
    }
}

#[test]
fn logging_is_controlled_by_environment() {
    let t = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_semloc")).args(["synth", "--output", "s"]).env("SEMLOC_LOG", "info").current_dir(t.path()).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("shared"), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(env!("CARGO_BIN_EXE_semloc")).args(["synth", "--output", "s"]).env_remove("SEMLOC_LOG").current_dir(t.path()).output().unwrap();
    assert!(out.stderr.is_empty());
}
