use std::path::Path;
use std::process::{Command, Output};

fn hiphop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiphop"))
        .args(args)
        .env_remove("HIPHOP_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

const EXAMPLE_1: [&str; 8] = ["--a", "0.581722", "--b", "0.81081", "--u", "1.96752", "--T", "6.53474"];
const EXAMPLE_2: [&str; 8] = ["--a", "1.37168", "--b", "0.717282", "--u", "1.73494", "--T", "6.95831"];

#[test]
fn constants_default_ring() {
    let o = hiphop(&["constants", "--json"]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["alphaN"].as_f64(), Some(4.25));
    assert!((v["gammaN"].as_f64().unwrap() - (5.0 + 4.0 / 3f64.sqrt()) / 4.0).abs() < 1e-12);
    assert_eq!(v["k"], 1);

    let o = hiphop(&["--N", "1", "--r0", "1", "constants", "--json"]);
    let v = json(&o);
    assert_eq!(v["alphaN"].as_f64(), Some(0.25));
    assert!((v["gammaN"].as_f64().unwrap() - 0.25).abs() < 1e-15);

    let text = stdout(&hiphop(&["constants"]));
    assert!(text.starts_with("alphaN   4.2500000000000000e0\n"));
}

#[test]
fn malformed_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "N = 3\nr0 = abc\n").unwrap();
    let o = hiphop(&["--config", path.to_str().unwrap(), "constants"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("r0") && err.contains("line 2"), "{err}");

    let o = Command::new(env!("CARGO_BIN_EXE_hiphop"))
        .arg("constants")
        .env("HIPHOP_CONFIG", &path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# ring\nN = 2\nr0 = 1\n").unwrap();
    let v = json(&hiphop(&["--config", path.to_str().unwrap(), "--N", "1", "constants", "--json"]));
    assert_eq!(v["params"]["N"], 1);
    assert_eq!(v["params"]["r0"].as_f64(), Some(1.0));
}

#[test]
fn simulate_equilibrium_rows() {
    let o = hiphop(&["simulate", "--t-end", "5", "--dt", "0.1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("t,r,r_dot,d,d_dot,theta,z,z_dot,energy"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 51);
    for row in rows {
        assert!((row[1] - 2.0).abs() < 1e-9);
        assert!(row[3].abs() < 1e-9 && row[6].abs() < 1e-9);
    }
}

#[test]
fn simulate_example_one_closes_and_conserves_energy() {
    let mut args = EXAMPLE_1.to_vec();
    args.extend(["simulate", "--dt", "0.05"]);
    let o = hiphop(&args);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    let (first, last) = (&rows[0], rows.last().unwrap());
    assert!((last[0] - 2.0 * 6.53474).abs() < 1e-12);
    for col in [1, 2, 3, 4, 6, 7] {
        assert!((last[col] - first[col]).abs() < 1e-2, "column {col}: {} vs {}", last[col], first[col]);
    }
    let e0 = first[8];
    assert!(rows.iter().all(|r| ((r[8] - e0) / e0).abs() < 1e-9));
}

#[test]
fn verify_example_two() {
    let mut args = EXAMPLE_2.to_vec();
    args.extend(["--tol", "1e-2", "verify"]);
    let o = hiphop(&args);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert!(v["residualNorm"].as_f64().unwrap() <= 5e-3);
    assert_eq!(v["verified"], true);

    // Default tolerance is far tighter than the printed digits.
    let o = hiphop(&EXAMPLE_2.iter().copied().chain(["verify"]).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn verify_needs_a_point() {
    let o = hiphop(&["--a", "1", "verify"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_seed_has_flat_primaries() {
    let o = hiphop(&["--b", "0", "--k", "1", "solve"]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["b"].as_f64(), Some(0.0));
    assert_eq!(v["converged"], true);
    assert!((v["a"].as_f64().unwrap() - 1.911727108762977).abs() < 1e-9);
    assert!((v["T"].as_f64().unwrap() - 4.3102295614779954).abs() < 1e-9);

    let u = v["u"].as_f64().unwrap().to_string();
    let t = v["T"].as_f64().unwrap().to_string();
    let args = ["--a", "1.911727108762977", "--b", "0", "--u", &u, "--T", &t, "simulate", "--dt", "0.1"];
    let rows = csv_rows(&stdout(&hiphop(&args)));
    assert!(rows.iter().all(|r| r[3] == 0.0 && r[4] == 0.0));
}

#[test]
fn period_curve_straddling_escape() {
    let o = hiphop(&["period-curve", "--u-grid", "3.0,0.5,2.4,2.45"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "u,c,t1,T,status");
    assert!(lines[1].starts_with("5.0000000000000000e-1,") && lines[1].ends_with(",ok"));
    assert!(lines[2].ends_with(",ok"));
    assert!(lines[3].ends_with(",,,,out_of_regime"));
    assert!(lines[4].ends_with(",,,,out_of_regime"));

    let o = hiphop(&["period-curve", "--u-grid", "3.0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn solve_then_verify_round_trip_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("point.json");
    let o = hiphop(&["--b", "0.02", "--out", out.to_str().unwrap(), "solve"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sidecar = dir.path().join("point.json.meta.json");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&sidecar).unwrap()).unwrap();
    assert_eq!(meta["command"], "solve");
    assert_eq!(meta["exitCode"], 0);

    let point = std::fs::read_to_string(&out).unwrap();
    assert!(!point.contains("elapsed"));
    let o = hiphop(&["verify", "--point", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
}

fn run_to(dir: &Path, name: &str, args: &[&str]) -> Vec<u8> {
    let path = dir.join(name);
    let mut all = vec!["--out", path.to_str().unwrap()];
    all.extend_from_slice(args);
    let o = hiphop(&all);
    assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(path).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, Vec<&str>); 4] = [
        ("sim.csv", EXAMPLE_1.iter().copied().chain(["simulate"]).collect()),
        ("solve.json", vec!["--b", "0.01", "solve"]),
        ("curve.csv", vec!["period-curve"]),
        ("family.json", vec!["--b-max", "0.01", "family"]),
    ];
    for (name, args) in &cases {
        let first = run_to(dir.path(), name, args);
        let second = run_to(dir.path(), name, args);
        assert_eq!(first, second, "{name}");
    }
}
