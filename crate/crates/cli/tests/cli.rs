use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vesselfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesselfit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = vesselfit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "phantom": {
            "shape": "arc", "length": 40.0, "base_radius": 5.0, "curvature": 0.05,
            "dims": [64, 64, 64], "spacing": [0.8, 0.8, 0.8]
        },
        "slice": { "half_extent_mm": 20.0 },
        "seed": 3
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn stages_reproduce_pipeline_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    let (whole, staged) = (whole.to_str().unwrap(), staged.to_str().unwrap());
    ok(&["pipeline", "--config", &cfg, "--out", whole]);
    for stage in ["phantom", "centerline", "slice", "segment", "contours", "fit", "mesh", "metrics"] {
        ok(&[stage, "--config", &cfg, "--out", staged]);
    }
    for name in [
        "volume.raw",
        "volume.json",
        "centerline.csv",
        "contours.json",
        "nurbs.json",
        "mesh.obj",
        "mesh.stl",
        "topology.json",
        "metrics.json",
    ] {
        let a = fs::read(Path::new(whole).join(name)).unwrap();
        let b = fs::read(Path::new(staged).join(name)).unwrap();
        assert!(a == b, "{name} differs between pipeline and stage runs");
    }
    let topo: serde_json::Value = serde_json::from_slice(&fs::read(Path::new(whole).join("topology.json")).unwrap()).unwrap();
    assert_eq!(topo["watertight"], true);
    assert_eq!(topo["euler_characteristic"], 2);
    assert_eq!(fs::read_dir(Path::new(staged).join("masks")).unwrap().count(), 16);
}

#[test]
fn missing_volume_reports_volume_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"volume": "nowhere.raw", "centerline": {"kind": "csv", "path": "c.csv"}}"#).unwrap();
    let out = vesselfit(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["stage"], "volume");
    assert!(err["message"].as_str().unwrap().contains("nowhere"));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"k": 16, "typo": true}"#).unwrap();
    assert_eq!(vesselfit(&["pipeline", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(vesselfit(&["mesh"]).status.code(), Some(2));
}

#[test]
fn study_writes_one_row_per_k() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(&["study", "--shape", "arc", "--out", out]);
    let csv = fs::read_to_string(tmp.path().join("study.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 1);
}

#[test]
fn merge_and_compare_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(&["compare", "--shape", "straight", "--out", out]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("compare.json")).unwrap()).unwrap();
    assert!(report["nurbs"]["metrics"]["cd_mm"].as_f64().unwrap() < report["marching_cubes"]["metrics"]["cd_mm"].as_f64().unwrap());
    assert_eq!(report["marching_cubes"]["topology"]["watertight"], true);
}

#[test]
fn merge_joins_branch_onto_main() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    ok(&["pipeline", "--shape", "branched", "--out", out]);
    let join = tmp.path().join("join");
    ok(&[
        "merge",
        "--main",
        tmp.path().join("mesh.obj").to_str().unwrap(),
        "--branch",
        tmp.path().join("branch_mesh.obj").to_str().unwrap(),
        "--out",
        join.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(join.join("junction.json")).unwrap()).unwrap();
    assert!(report["bridge_triangles"].as_u64().unwrap() > 0);
    assert!(report["max_bridge_length"].as_f64().unwrap() < 2.0);
    // the merged mesh reads back through the OBJ parser
    let text = fs::read_to_string(join.join("merged.obj")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("f ")));
}
