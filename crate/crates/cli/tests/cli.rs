use std::path::Path;
use std::process::{Command, Output};

fn igbem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igbem"))
        .args(args)
        .env("IGBEM_LOG", "error")
        .output()
        .expect("binary runs")
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(format!("{name}.json"));
    let path = path.to_str().unwrap().to_owned();
    let mut args = vec!["generate", "--name", name, "--out", &path];
    args.extend_from_slice(extra);
    let out = igbem(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
    reader.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn low_frequency_cube_leaves_the_field_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate(dir.path(), "cube", &["--k", "1e-4"]);
    let out_dir = dir.path().join("out");
    let out = igbem(&[
        "solve",
        "--scene",
        &scene,
        "--out",
        out_dir.to_str().unwrap(),
        "--plane",
        "y=0.5",
        "--resolution",
        "9,9",
        "--dump-matrices",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let abs = column(&out_dir.join("plane_field.csv"), "abs_u");
    let outside: Vec<f64> = abs.into_iter().filter(|v| v.is_finite()).collect();
    assert!(!outside.is_empty());
    assert!(outside.iter().all(|v| (v - 1.0).abs() < 1e-2), "{outside:?}");
    for file in ["observations.csv", "surface_field.csv", "A.bin", "b.bin", "u.bin"] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    let surface = column(&out_dir.join("surface_field.csv"), "abs_u");
    assert!(surface.iter().all(|v| (v - 1.0).abs() < 1e-2));
}

#[test]
fn run_mode_matches_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate(dir.path(), "sphere", &["--subdivisions", "1"]);
    let a = igbem(&[
        "solve",
        "--scene",
        &scene,
        "--out",
        dir.path().join("a").to_str().unwrap(),
    ]);
    let b = igbem(&[
        "run",
        "--mode",
        "solve",
        "--scene",
        &scene,
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains("N = 98"));
}

#[test]
fn missing_scene_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out_dir = dir.path().join("out");
    let out_dir = out_dir.to_str().unwrap();
    let out = igbem(&["solve", "--scene", missing.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(out.status.code(), Some(1));
    let scene = generate(dir.path(), "sphere", &["--subdivisions", "1"]);
    let out = igbem(&["optimize", "--scene", &scene, "--out", out_dir, "--ftol-rel=-1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = igbem(&["solve", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(igbem(&["--help"]).status.code(), Some(0));
}

#[test]
fn exhausted_budget_exits_with_not_converged() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate(dir.path(), "sphere", &["--subdivisions", "1"]);
    let out_dir = dir.path().join("opt");
    let out = igbem(&[
        "optimize",
        "--scene",
        &scene,
        "--out",
        out_dir.to_str().unwrap(),
        "--max-eval",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let evals = column(&out_dir.join("history.csv"), "eval");
    assert_eq!(evals.len(), 2);
    assert!(out_dir.join("checkpoint.json").exists());
}

#[test]
fn sweep_writes_one_row_per_radius() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate(dir.path(), "sphere", &["--subdivisions", "1"]);
    let out_dir = dir.path().join("sweep");
    let out = igbem(&[
        "sweep",
        "--scene",
        &scene,
        "--out",
        out_dir.to_str().unwrap(),
        "--a",
        "2:3:0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    assert_eq!(csv::Reader::from_path(csv).unwrap().records().count(), 3);
}
