use std::fs;
use std::path::Path;

use assert_cmd::Command;
use serde_json::Value;

use tiegrid::case_io::bundled;
use tiegrid::harness::{run_sweep, Aggregate, SweepConfig};
use tiegrid::partition::Partition;

fn tiegrid() -> Command {
    Command::cargo_bin("tiegrid").unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn pglib(name: &str) -> String {
    format!("{}/../../data/pglib/{name}.m", env!("CARGO_MANIFEST_DIR"))
}

const SHORT_SUPPLY: &str = r#"{
  "schema": 1, "name": "short", "base_mva": 100.0,
  "buses": [
    { "id": 1, "generation": 0.5, "gen_max": 0.5, "area": 0 },
    { "id": 2, "demand": 0.5, "area": 0 },
    { "id": 3, "demand": 0.5, "area": 1 }
  ],
  "lines": [
    { "from": 1, "to": 2, "susceptance": 10.0, "limit": 2.0 },
    { "from": 2, "to": 3, "susceptance": 10.0, "limit": 2.0 }
  ]
}"#;

#[test]
fn solve_two_bus_prints_unit_flow() {
    let out = tiegrid().args(["solve", "two_bus"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("(1,2)")).unwrap();
    let flow: f64 = row.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert_eq!(flow, 1.0);
}

#[test]
fn solve_after_failure_reports_the_level() {
    let dir = tempfile::tempdir().unwrap();
    tiegrid()
        .args(["solve", "ieee39", "--fail", "6-7", "--out"])
        .arg(dir.path())
        .assert()
        .success()
        .stdout(predicates::str::contains("level L1"));
    let doc = read_json(&dir.path().join("solve.json"));
    assert_eq!(doc["tool"], "tiegrid");
    assert_eq!(doc["config"]["failures"][0][0], 6);
    assert_eq!(doc["control"]["level"], "L1");
}

#[test]
fn exit_codes() {
    tiegrid().args(["solve", "no_such_case"]).assert().code(3);
    tiegrid().args(["solve", "two_bus", "--fail", "1-9"]).assert().code(3);
    tiegrid().args(["solve", "two_bus", "--fail", "1"]).assert().code(2);
    tiegrid().args(["frobnicate"]).assert().code(2);
    tiegrid().args(["sweep", "six_bus_two_area", "--alpha", "0"]).assert().code(2);
    tiegrid().args(["sweep", "six_bus_two_area", "--strategies", "uc-ring"]).assert().code(2);

    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("short.json");
    fs::write(&case, SHORT_SUPPLY).unwrap();
    tiegrid()
        .args(["sweep", "--partition", "case", "--out"])
        .arg(dir.path().join("out"))
        .arg(&case)
        .assert()
        .code(4);
    tiegrid()
        .args(["solve", "--strict-parse"])
        .arg(dir.path().join("missing.json"))
        .assert()
        .code(3);
}

#[test]
fn strict_parse_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("extra.json");
    let balanced = SHORT_SUPPLY.replace("\"generation\": 0.5, \"gen_max\": 0.5", "\"generation\": 1.0, \"gen_max\": 2.0");
    fs::write(&case, balanced.replace("\"demand\": 0.5, \"area\": 1", "\"demand\": 0.5, \"area\": 1, \"q\": 0")).unwrap();
    tiegrid().arg("solve").arg(&case).assert().success();
    tiegrid().args(["solve", "--strict-parse"]).arg(&case).assert().code(3);
}

#[test]
fn sweep_matches_the_library_and_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        tiegrid()
            .args(["sweep", "six_bus_two_area", "--alpha", "1", "--workers", workers, "--out"])
            .arg(out)
            .assert()
            .success();
    }
    for f in ["report.json", "scenarios.csv", "tables.md", "run.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    // Same sweep through the library with the partition the CLI chose.
    let report = read_json(&a.join("report.json"));
    let grid = bundled("six_bus_two_area").unwrap().grid;
    let topo = grid.topology();
    let mut partition = tiegrid::partition::modularity_bisect(&topo).unwrap();
    let off: Vec<_> = report["switched_off"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| grid.find_line(p[0].as_u64().unwrap() as u32, p[1].as_u64().unwrap() as u32).unwrap())
        .collect();
    partition = Partition::new(partition.area_of).with_switched_off(off);
    let config = SweepConfig {
        alphas: vec![1.0],
        ..SweepConfig::default()
    };
    let want = run_sweep(&grid, &partition, &config).unwrap();
    let rows: Vec<Aggregate> = serde_json::from_value(report["rows"].clone()).unwrap();
    assert_eq!(rows, want.report.rows);

    let hash = report["config_hash"].as_str().unwrap().to_string();
    let csv = fs::read_to_string(a.join("scenarios.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains(&hash));
    let md = fs::read_to_string(a.join("tables.md")).unwrap();
    assert!(md.lines().next().unwrap().contains(&hash));
    let run = read_json(&a.join("run.json"));
    assert_eq!(run["config_hash"], report["config_hash"]);
    assert_eq!(run["config"]["alphas"][0], 1.0);
}

#[test]
fn config_hash_follows_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let hash = |alpha: &str, out: &str| {
        let out = dir.path().join(out);
        tiegrid()
            .args(["sweep", "six_bus_two_area", "--strategies", "uc-mesh", "--alpha", alpha, "--out"])
            .arg(&out)
            .assert()
            .success();
        read_json(&out.join("report.json"))["config_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("1", "x"), hash("1", "y"));
    assert_ne!(hash("1", "x"), hash("1.5", "z"));
}

#[test]
fn partition_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    tiegrid()
        .args(["partition", "ieee39", "--method", "given", "--switching", "optimal", "--out"])
        .arg(dir.path())
        .assert()
        .success();
    let doc = read_json(&dir.path().join("partition.json"));
    let report = &doc["report"];
    assert_eq!(report["tie_lines"].as_array().unwrap().len(), 3);
    assert_eq!(report["switched_off"].as_array().unwrap().len(), 2);
    assert!(report["gamma_tree"].as_f64().unwrap() >= report["gamma_mesh"].as_f64().unwrap() - 1e-12);

    // The written partition drives a sweep.
    let file = dir.path().join("partition.json");
    tiegrid()
        .args(["sweep", "ieee39", "--alpha", "1", "--strategies", "uc-tree", "--partition"])
        .arg(&file)
        .arg("--out")
        .arg(dir.path().join("sweep"))
        .assert()
        .success();
    let report = read_json(&dir.path().join("sweep/report.json"));
    assert_eq!(report["switched_off"], doc["report"]["switched_off"]);
}

#[test]
fn partition_118_reports_ties() {
    let out = tiegrid()
        .args(["partition", &pglib("pglib_opf_case118_ieee")])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("tie lines")).unwrap();
    let n: usize = line["tie lines ".len()..].split(':').next().unwrap().parse().unwrap();
    assert!((3..=6).contains(&n), "{line}");
}

#[test]
fn cascade_writes_trace_and_stages() {
    let dir = tempfile::tempdir().unwrap();
    tiegrid()
        .args(["cascade", "ieee39", "--fail", "6-7", "--rule", "droop", "--out"])
        .arg(dir.path())
        .assert()
        .success();
    let doc = read_json(&dir.path().join("cascade.json"));
    let stages = doc["trace"]["stages"].as_array().unwrap();
    let csv = fs::read_to_string(dir.path().join("stages.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# tiegrid"));
    assert!(lines.next().unwrap().starts_with("stage,tripped"));
    assert_eq!(lines.count(), stages.len());
}

#[test]
fn demo39_outputs() {
    let dir = tempfile::tempdir().unwrap();
    tiegrid()
        .args(["demo39", "--horizon", "20", "--out"])
        .arg(dir.path())
        .assert()
        .success();
    let doc = read_json(&dir.path().join("demo39.json"));
    let runs = doc["runs"].as_array().unwrap();
    assert_eq!(runs[0]["failure"], serde_json::json!([4, 14]));
    assert_eq!(runs[0]["level"], "L0");
    assert!(runs[0]["warning_time"].is_null());
    assert_eq!(runs[1]["level"], "L1");
    assert!(runs[1]["warning_time"].as_f64().unwrap() < 20.0);
    for f in ["trajectory_4_14.csv", "trajectory_6_7.csv", "events.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with(&format!("# tiegrid {} config ", env!("CARGO_PKG_VERSION"))), "{f}");
    }
}

#[test]
fn import_round_trips_through_strict_parse() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("118.json");
    tiegrid()
        .args(["import", &pglib("pglib_opf_case118_ieee"), "--out"])
        .arg(&out)
        .assert()
        .success();
    let doc = read_json(&out);
    assert!(doc["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().starts_with("tiegrid ")));
    let text = String::from_utf8(
        tiegrid()
            .args(["solve", "--opf", "--strict-parse"])
            .arg(&out)
            .output()
            .unwrap()
            .stdout,
    )
    .unwrap();
    assert_eq!(text.lines().count(), 1 + 186);
}
