use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use miso_wpt::circuit::load_impedance_file;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miso-wpt"))
        .args(args)
        .env("MISO_WPT_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let text = fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    csv::Reader::from_reader(body.as_bytes()).records().map(Result::unwrap).collect()
}

#[test]
fn gen_matrix_round_trips_and_matches_preset_solve() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("z.json");
    let out = run(&["gen-matrix", "--preset", "MISO-2p", "--theta", "30", "--out", file.to_str().unwrap()]);
    assert!(out.status.success());
    let z = load_impedance_file(&file).unwrap();
    assert_eq!(z.n_ports(), 3);
    // Re-serializing the loaded matrix reproduces the file byte for byte.
    let again = dir.path().join("again.json");
    miso_wpt::circuit::save_impedance_file(&z, &again).unwrap();
    assert_eq!(fs::read(&file).unwrap(), fs::read(&again).unwrap());

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["solve", "--matrix", file.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["solve", "--preset", "MISO-2p", "--theta", "30", "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(a.join("result.json")).unwrap(), fs::read(b.join("result.json")).unwrap());
}

#[test]
fn solve_reports_siso_quantities() {
    let out = run(&["solve", "--preset", "SISO", "--d", "0.1", "--theta", "0"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["U ", "eta_max", "R_L*", "C_r"] {
        assert!(text.contains(key), "missing {key} in\n{text}");
    }
    let json_start = text.find('{').unwrap();
    let v: serde_json::Value = serde_json::from_str(&text[json_start..]).unwrap();
    assert_eq!(v["skipped"], true);
    assert!(v["c_r"].as_f64().unwrap() > 0.0);
    assert_eq!(v["inputs_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes_follow_the_documented_table() {
    assert_eq!(run(&["solve", "--preset", "MISO-9"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--preset", "SISO", "--rl", "-3"]).status.code(), Some(2));
    let caps = run(&["solve", "--preset", "MISO-2p", "--theta", "30", "--constraints", "caps=0,0"]);
    assert_eq!(caps.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&caps.stderr).contains("infeasible"));
    assert_eq!(run(&["solve", "--matrix", "/nonexistent/z.json"]).status.code(), Some(4));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"frequency_hz": 1e7, "n_ports": 2, "re": [[1, 0], [0, 1]]}"#).unwrap();
    assert_eq!(run(&["solve", "--matrix", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweep_is_complete_tight_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = run(&["sweep", "--preset", "MISO-3c", "--theta-range=-90:2:90", "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
    let rows = csv_rows(&a.join("sweep.csv"));
    assert_eq!(rows.len(), 91);
    let text = fs::read_to_string(a.join("sweep.csv")).unwrap();
    let header: Vec<&str> = text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut relaxed = 0;
    for r in &rows {
        assert_eq!(&r[col("constraints")], "nonneg");
        assert_eq!(r[col("matrix_hash")].len(), 64);
        if &r[col("skipped")] == "false" {
            relaxed += 1;
            assert!(r[col("epsilon")].parse::<f64>().unwrap() <= 1e-8);
        }
    }
    assert!(relaxed > 0);
    let pattern = csv_rows(&a.join("pattern.csv"));
    // η_max, η and two power series per port for three transmitters.
    assert_eq!(pattern.len(), 91 * (2 + 2 * 3));
}

#[test]
fn sweep_rejects_empty_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--preset", "SISO", "--theta-range=10:2:0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
