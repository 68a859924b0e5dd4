use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn qcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcd")).args(args).env_remove("QD_SEED").output().expect("binary runs")
}

fn qcd_stdin(args: &[&str], input: &str, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qcd"));
    cmd.args(args).env_remove("QD_SEED").stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    for (k, v) in env {
        cmd.env(k, v);
    }
    let mut child = cmd.spawn().expect("binary runs");
    // The process may stop reading early; a broken pipe is expected then.
    let _ = child.stdin.take().unwrap().write_all(input.as_bytes());
    child.wait_with_output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/report.schema.json");
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).expect("schema compiles")
}

fn assert_valid(doc: &Value) {
    let v = schema();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn exact_and_numerical_u2b_reports_agree() {
    let exact = json(&qcd(&["oc", "--model", "u2b", "--proc", "sr-r", "--gamma", "2", "--exact", "--pfa-window", "2"]));
    let num = json(&qcd(&["oc", "--model", "u2b", "--proc", "sr-r", "--gamma", "2", "--grid", "600", "--pfa-window", "2"]));
    assert_valid(&exact);
    assert_valid(&num);
    let e = &exact["result"];
    let n = &num["result"]["report"];
    for (ek, nk) in [("arl", "arl"), ("j_p", "j_p"), ("add_inf", "add_inf"), ("threshold", "threshold")] {
        let (x, y) = (e[ek].as_f64().unwrap(), n[nk].as_f64().unwrap());
        assert!((x / y - 1.0).abs() < 1e-4, "{ek}: {x} vs {y}");
    }
    let ep = e["local_pfa"].as_array().unwrap();
    let np = n["local_pfa"]["profile"].as_array().unwrap();
    for (a, b) in ep.iter().zip(np) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-4);
    }
}

#[test]
fn outputs_are_byte_stable_with_sorted_keys() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(format!("{name}.json"));
        let curve = dir.path().join(format!("{name}.csv"));
        let o = qcd(&[
            "oc", "--model", "beta", "--delta", "1", "--proc", "sr-r", "--r", "2", "--A", "43", "--grid", "300",
            "--curve-csv", curve.to_str().unwrap(), "-o", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(out).unwrap(), std::fs::read_to_string(curve).unwrap())
    };
    let (a, ca) = run("a");
    let (b, cb) = run("b");
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let lines: Vec<&str> = ca.lines().collect();
    assert!(lines[0].starts_with("# {\"command\":\"oc\""));
    assert_eq!(lines[1], "nu,add");
    assert!(lines[2].starts_with("0,"));
    let doc: Value = serde_json::from_slice(&a).unwrap();
    assert_valid(&doc);
    assert_eq!(doc["meta"]["grid_n"], 300);
    assert_eq!(doc["meta"]["tool"], "qcd");
    // Keys appear in sorted order in the raw text.
    let text = String::from_utf8(a).unwrap();
    let pos = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
    assert!(pos("add_curve") < pos("arl") && pos("arl") < pos("diagnostics") && pos("j_b") < pos("threshold"));
    // 12 significant digits at most.
    for v in doc["result"]["report"]["add_curve"].as_array().unwrap() {
        let digits: String = v.to_string().chars().filter(|c| c.is_ascii_digit()).collect();
        assert!(digits.trim_start_matches('0').len() <= 12, "{v}");
    }
}

#[test]
fn exit_codes() {
    let domain = qcd(&["oc", "--model", "beta", "--delta", "-1", "--proc", "sr", "--A", "43"]);
    assert_eq!(domain.status.code(), Some(2));
    let err = String::from_utf8_lossy(&domain.stderr);
    assert!(err.contains("delta") && err.lines().count() == 1, "{err}");
    let missing = qcd(&["oc", "--model", "beta", "--proc", "sr", "--A", "43"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("delta"));
    let both = qcd(&["oc", "--model", "u2b", "--proc", "sr", "--A", "1", "--gamma", "2"]);
    assert_eq!(both.status.code(), Some(2));
    assert_eq!(qcd(&["oc", "--bogus"]).status.code(), Some(2));
    let numerical = qcd(&["calibrate", "--model", "u2b", "--proc", "sr", "--gamma", "1e300", "--grid", "50"]);
    assert_eq!(numerical.status.code(), Some(3), "{}", String::from_utf8_lossy(&numerical.stderr));
    assert_eq!(qcd(&["--version"]).status.code(), Some(0));
}

#[test]
fn detect_reads_stdin_and_honours_seed_precedence() {
    let obs: String = (0..2000).map(|i| format!("{}\n", 0.5 + 0.4 * ((i * 7919) % 13) as f64 / 13.0)).collect();
    let args = ["detect", "--model", "u2b", "--proc", "srp", "--A", "1.5", "--grid", "200"];
    let a = json(&qcd_stdin(&args, &obs, &[("QD_SEED", "11")]));
    let b = json(&qcd_stdin(&args, &obs, &[("QD_SEED", "11")]));
    let c = json(&qcd_stdin(&args, &obs, &[("QD_SEED", "12")]));
    assert_valid(&a);
    assert_eq!(a, b);
    assert_eq!(a["meta"]["seed"], 11);
    assert_ne!(a["result"]["start"], c["result"]["start"]);
    let mut flagged = args.to_vec();
    flagged.extend(["--seed", "12"]);
    let d = json(&qcd_stdin(&flagged, &obs, &[("QD_SEED", "11")]));
    assert_eq!(d["result"]["start"], c["result"]["start"]);
    let r = &a["result"];
    assert_eq!(r["alarm_raised"], true);
    assert_eq!(r["stopping_time"], r["observations_read"]);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "model = \"u2b\"\nproc = \"sr-r\"\ngamma = 1.5\n").unwrap();
    let out = json(&qcd(&["oc", "--exact", "--config", cfg.to_str().unwrap()]));
    assert!((out["result"]["arl"].as_f64().unwrap() - 1.5).abs() < 1e-9);
    assert_eq!(out["meta"]["config"]["gamma"], 1.5);
    std::fs::write(&cfg, "modle = \"u2b\"\n").unwrap();
    let bad = qcd(&["oc", "--config", cfg.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("modle"));
}

#[test]
fn u2b_case_study_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("u2b.csv");
    let out = json(&qcd(&["case-study", "u2b", "--csv", csv.to_str().unwrap()]));
    assert_eq!(out["result"]["srp_above_srr_everywhere"], true);
    assert!(out["result"]["max_relative_gap_jp_jb"].as_f64().unwrap() < 1e-9);
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "gamma,jp_srr,jp_srp,jb");
    assert_eq!(lines.len(), 52);
}

#[test]
fn validate_u2b_suite_passes() {
    let out = json(&qcd(&["validate", "--suite", "u2b", "--grid", "600"]));
    assert_valid(&out);
    assert_eq!(out["result"]["passed"], true);
}
