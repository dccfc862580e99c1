use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn svph(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svph"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SVPH_GRID")
        .env_remove("SVPH_SEED")
        .output()
        .expect("binary runs")
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_passes_on_the_product_map_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let map = data("E0.json");
    let o = svph(dir.path(), &["check", "--map", map.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = read_json(dir.path().join("check.json"));
    assert_eq!(report["structural_pass"], true);
    let manifest = read_json(dir.path().join("manifest.json"));
    assert_eq!(manifest["tool"], "svph");
    assert_eq!(manifest["map_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["settings"]["seed"], 20240601);
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v == "check.json"));
}

#[test]
fn strong_drift_exits_with_hypothesis_failure() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("strong.json");
    let text = std::fs::read_to_string(data("E1.json"))
        .unwrap()
        .replace("0.05", "0.5");
    std::fs::write(&map, text).unwrap();
    let o = svph(
        &dir.path().join("out"),
        &["check", "--map", map.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_map_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("bad.json");
    std::fs::write(
        &map,
        r#"{"degree": 1, "f_pert": {}, "omega": {}, "epsilon": 0.1}"#,
    )
    .unwrap();
    let o = svph(
        &dir.path().join("out"),
        &["check", "--map", map.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("degree"), "{err}");

    let o = svph(
        &dir.path().join("out"),
        &["check", "--map", "/nonexistent/map.json"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn coboundary_drift_is_reported_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let map = data("E2.json");
    let o = svph(
        dir.path(),
        &["xconst", "--map", map.to_str().unwrap(), "--period", "5"],
    );
    assert_eq!(o.status.code(), Some(0));
    let r = read_json(dir.path().join("xconst.json"));
    assert_eq!(r["report"]["consistent"], true);
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let map = data("E1.json");
    let args = [
        "srb",
        "--map",
        map.to_str().unwrap(),
        "--method",
        "orbit",
        "--steps",
        "40000",
        "--seeds",
        "4",
        "--grid",
        "16",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(svph(&a, &args).status.code(), Some(0));
    assert_eq!(svph(&b, &args).status.code(), Some(0));
    let read = |d: &Path| std::fs::read(d.join("srb_orbit.csv")).unwrap();
    assert_eq!(read(&a), read(&b));

    let c = dir.path().join("c");
    let mut other = args.to_vec();
    other.extend(["--seed", "7"]);
    assert_eq!(svph(&c, &other).status.code(), Some(0));
    assert_ne!(read(&a), read(&c));
}
