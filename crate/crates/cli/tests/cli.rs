use std::process::Command;

fn meow(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_meow")).args(args).output().unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap())
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn run_preset_writes_exports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("exp1.csv");
    let trace = dir.path().join("exp1.trace");
    let (ok, out) = meow(&[
        "run",
        "exp1",
        "--csv",
        csv.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(ok);
    assert_eq!(json(&out)["stats"]["min_ns"], 90_000);
    let csv = std::fs::read_to_string(csv).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    assert!(csv.starts_with("request_id,t_gen_us,"));
    assert!(std::fs::read_to_string(trace).unwrap().contains('②'));
}

#[test]
fn extrapolate_and_compare() {
    let (ok, out) = meow(&["extrapolate", "--racks", "1000", "--masters", "4"]);
    assert!(ok);
    assert_eq!(json(&out)["worst_ns"], 412_000);
    let (ok, out) = meow(&["pdo-compare"]);
    assert!(ok);
    assert_eq!(json(&out)["reduction_ns"], 48_000);
    let (ok, _) = meow(&["extrapolate", "--racks", "10", "--masters", "0"]);
    assert!(!ok);
}

#[test]
fn sweep_reports_slope() {
    let (ok, out) = meow(&["sweep", "--devices", "1..4"]);
    assert!(ok);
    let v = json(&out);
    assert_eq!(v["points"].as_array().unwrap().len(), 4);
    assert!((v["slope_ns"].as_f64().unwrap() - 900.0).abs() < 1e-6);
}

#[test]
fn codec_selftest_passes() {
    let (ok, out) = meow(&["codec", "selftest"]);
    assert!(ok);
    assert!(out.contains(", 0 failed"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0C10 ERR:BadType\n").unwrap();
    let (ok, _) = meow(&["codec", "selftest", "--vectors", bad.to_str().unwrap()]);
    assert!(!ok);
}

#[test]
fn network_script() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("demo.nc");
    std::fs::write(&script, "allocate 1 2\nactivate 0\ndump-table\n").unwrap();
    let (ok, out) = meow(&["nc", script.to_str().unwrap()]);
    assert!(ok);
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(json(lines[2])["paths"][0]["state"], "Active");
}

#[test]
fn unknown_scenario_fails() {
    assert!(!meow(&["run", "no-such-file.json"]).0);
}
