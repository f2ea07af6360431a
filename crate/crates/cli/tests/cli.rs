use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stmarkov(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmarkov")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = stmarkov(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const RUN: &[&str] = &[
    "run", "--code", "repetition", "--L", "16", "--rounds", "16", "--p", "0.09", "--q", "0.09", "--wA", "2", "--wB-max", "5",
    "--samples", "100000", "--seed", "42", "--out", "run.json",
];

#[test]
fn run_writes_fit_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), RUN);
    let v = json(&tmp.path().join("run.json"));
    assert_eq!(v["points"].as_array().unwrap().len(), 5);
    assert_eq!(v["method"], "sampled");
    for key in ["config_hash", "code_hash", "model_hash", "seed", "version", "config"] {
        assert!(!v["meta"][key].is_null(), "meta.{key}");
    }
    assert_eq!(v["meta"]["seed"], 42);
    let csv = std::fs::read_to_string(tmp.path().join("run.csv")).unwrap();
    let mut body = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(body.next().unwrap(), "code,L,T,p,q,wA,wB,dist,cmi_bits,cmi_stderr");
    assert_eq!(body.count(), 5);
    assert!(csv.contains(&format!("# config_hash={}", v["meta"]["config_hash"].as_str().unwrap())));
}

#[test]
fn repeated_run_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), RUN);
    let first = std::fs::read(tmp.path().join("run.json")).unwrap();
    ok(tmp.path(), RUN);
    assert_eq!(first, std::fs::read(tmp.path().join("run.json")).unwrap());
}

#[test]
fn bad_probability_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stmarkov(tmp.path(), &["run", "--p", "0.7"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("noise.p: probability out of [0, 0.5]"), "{e}");
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("exp.conf"), "code.size = 12\ncode.rounds = 12\nnoise.p = 0.05\nseed = 3\n").unwrap();
    ok(tmp.path(), &["run", "--config", "exp.conf", "--p", "0.07", "--out", "a.json"]);
    let v = json(&tmp.path().join("a.json"));
    assert_eq!(v["l"], 12);
    assert_eq!(v["p"], 0.07);
    assert_eq!(v["meta"]["seed"], 3);
    std::fs::write(tmp.path().join("exp.json"), r#"{"code": {"size": 12, "rounds": 12}, "noise": {"p": 0.07}, "seed": 3}"#).unwrap();
    ok(tmp.path(), &["run", "--config", "exp.json", "--out", "b.json"]);
    assert_eq!(json(&tmp.path().join("b.json"))["points"], v["points"]);
    std::fs::write(tmp.path().join("bad.json"), r#"{"noise": {"rate": 0.1}}"#).unwrap();
    let o = stmarkov(tmp.path(), &["run", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise.rate: unknown field"), "{}", stderr(&o));
}

const SWEEP: &[&str] = &[
    "sweep", "--sizes", "12x12,14x14", "--ps", "0.03,0.05,0.07,0.09,0.11,0.13", "--shots", "4000", "--out", "sw.json",
];

#[test]
fn sweep_table_and_peak_summary() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), SWEEP);
    let v = json(&tmp.path().join("sw.json"));
    assert_eq!(v["cells"].as_array().unwrap().len(), 12);
    assert_eq!(v["peaks"].as_array().unwrap().len(), 2);
    assert_eq!(v["decoder"]["curves"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(tmp.path().join("sw.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 12 * 5);
    let dec = std::fs::read_to_string(tmp.path().join("sw_decoder.csv")).unwrap();
    let mut body = dec.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(body.next().unwrap(), "L,T,p,q,shots,logical_errors,rate,ci_low,ci_high");
    assert_eq!(body.count(), 12);
}

#[test]
fn sweep_without_peak_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(tmp.path(), &["sweep", "--sizes", "12x12", "--ps", "0.11,0.13,0.15", "--out", "sw.json"]);
    assert!(stderr(&o).contains("no interior maximum"));
    let v = json(&tmp.path().join("sw.json"));
    assert_eq!(v["peaks"][0]["note"], "no interior maximum");
    assert_eq!(v["peaks"][0]["interior"], false);
}

#[test]
fn sweep_records_cell_failures_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["sweep", "--sizes", "6x6,12x12", "--ps", "0.05,0.1", "--out", "sw.json"]);
    let v = json(&tmp.path().join("sw.json"));
    let cells = v["cells"].as_array().unwrap();
    assert!(cells[0]["error"].as_str().unwrap().contains("leaves the bulk"));
    assert!(cells[2]["error"].is_null());
    assert!(cells[2]["xi"].as_f64().unwrap() > 0.0);
}

#[test]
fn resume_completes_only_missing_cells() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), SWEEP);
    let full = std::fs::read(tmp.path().join("sw.json")).unwrap();
    let ckpt = tmp.path().join("sw.json.cells.jsonl");
    let lines: Vec<String> = std::fs::read_to_string(&ckpt).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 12);
    std::fs::write(&ckpt, lines[..5].join("\n") + "\n" + &lines[5][..20]).unwrap();
    let mut args = SWEEP.to_vec();
    args.push("--resume");
    let o = ok(tmp.path(), &args);
    assert!(stderr(&o).contains("12 cells: 5 reused from checkpoint, 7 computed"), "{}", stderr(&o));
    assert_eq!(std::fs::read(tmp.path().join("sw.json")).unwrap(), full);
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = SWEEP.to_vec();
    a.extend(["--samples", "20000", "--jobs", "1"]);
    ok(tmp.path(), &a);
    let one = std::fs::read(tmp.path().join("sw.json")).unwrap();
    let n = a.len();
    a[n - 1] = "4";
    ok(tmp.path(), &a);
    assert_eq!(one, std::fs::read(tmp.path().join("sw.json")).unwrap());
}

#[test]
fn threshold_reports_crossing() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(
        tmp.path(),
        &["threshold", "--sizes", "8x8,12x12", "--ps", "0.05,0.08,0.11,0.14,0.17", "--shots", "20000", "--out", "th.json"],
    );
    assert!(stderr(&o).contains("crossing"));
    let v = json(&tmp.path().join("th.json"));
    let c = v["decoder"]["crossing"]["estimate"].as_f64().unwrap();
    assert!((0.07..=0.14).contains(&c), "{c}");
    assert!(tmp.path().join("th.csv").exists());
}

#[test]
fn verify_passes_and_detects_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(tmp.path(), &["verify", "--random-configs", "100", "--samples", "50000", "--out", "v.json"]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.lines().all(|l| l.starts_with("PASS") || l.starts_with("SKIP")), "{text}");
    assert_eq!(json(&tmp.path().join("v.json"))["passed"], true);

    let o = stmarkov(tmp.path(), &["verify", "--target", "repetition:5:4", "--random-configs", "10", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL repetition-L5-mf4/correspondence"));
}

#[test]
fn verify_skips_checks_beyond_caps() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(tmp.path(), &["verify", "--target", "repetition:12:5", "--random-configs", "5", "--samples", "2000"]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.contains("SKIP repetition-L12-mf5/resource-entropy"), "{text}");
    assert!(text.contains("SKIP repetition-L12-mf5/entropy-decomposition"), "{text}");
}

#[test]
fn export_then_ingest_matches_in_process_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let common = ["--L", "16", "--rounds", "16", "--p", "0.09", "--samples", "30000", "--seed", "5"];
    let with = |head: &[&'static str], tail: &[&'static str]| -> Vec<&'static str> {
        head.iter().chain(common.iter()).chain(tail.iter()).copied().collect()
    };
    ok(tmp.path(), &with(&["run"], &["--out", "run.json"]));
    ok(tmp.path(), &with(&["export"], &["--out", "s.hex"]));
    ok(tmp.path(), &with(&["export"], &["--encoding", "binary", "--out", "s.bin"]));
    ok(tmp.path(), &["ingest", "s.hex", "--L", "16", "--rounds", "16", "--out", "h.json"]);
    ok(tmp.path(), &["ingest", "s.bin", "--L", "16", "--rounds", "16", "--out", "b.json"]);
    let run = json(&tmp.path().join("run.json"));
    for f in ["h.json", "b.json"] {
        let v = json(&tmp.path().join(f));
        assert_eq!(v["points"], run["points"], "{f}");
        assert_eq!(v["fit"], run["fit"], "{f}");
    }
}

#[test]
fn ingest_format_errors() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["export", "--L", "16", "--rounds", "16", "--samples", "20", "--out", "s.hex"]);
    let text = std::fs::read_to_string(tmp.path().join("s.hex")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let short = &lines[8][..2];
    lines[8] = short;
    std::fs::write(tmp.path().join("t.hex"), lines.join("\n")).unwrap();
    let o = stmarkov(tmp.path(), &["ingest", "t.hex", "--L", "16", "--rounds", "16"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 7:"), "{}", stderr(&o));

    let header = lines[0].replace("check_round", "lattice_xyz");
    std::fs::write(tmp.path().join("u.hex"), header + "\n").unwrap();
    let o = stmarkov(tmp.path(), &["ingest", "u.hex", "--L", "16", "--rounds", "16"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("lattice_xyz") && e.contains("supported schemes: check_round"), "{e}");
}

#[test]
fn describe_views() {
    let tmp = tempfile::tempdir().unwrap();
    let dem = ok(tmp.path(), &["describe", "--L", "3", "--rounds", "2", "--p", "0.1"]);
    let dem = String::from_utf8_lossy(&dem.stdout).into_owned();
    assert_eq!(dem.lines().count(), 3 * 3 + 3 * 2);
    let code = ok(tmp.path(), &["describe", "--L", "3", "--what", "code"]);
    let v: Value = serde_json::from_slice(&code.stdout).unwrap();
    assert_eq!(v["n_qubits"], 3);
    let graph = ok(tmp.path(), &["describe", "--L", "3", "--rounds", "1", "--what", "graph"]);
    assert!(String::from_utf8_lossy(&graph.stdout).starts_with("qubits "));
    let stab = ok(tmp.path(), &["describe", "--L", "3", "--rounds", "1", "--what", "stabilizers"]);
    assert!(String::from_utf8_lossy(&stab.stdout).lines().any(|l| l.starts_with("cell z")));
}
