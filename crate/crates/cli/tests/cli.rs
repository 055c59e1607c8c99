use std::path::Path;
use std::process::{Command, Output};

fn phaseplane(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaseplane"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("PHASEPLANE_SEED")
        .env_remove("PHASEPLANE_OUT")
        .output()
        .unwrap()
}

#[test]
fn invalid_config_exits_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"alpha": 1.5}"#).unwrap();
    let out = phaseplane(&["tile-type"], &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`alpha`"));
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"alhpa": 0.5}"#).unwrap();
    let out = phaseplane(&["converge"], &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_seed_variable_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, "{}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_phaseplane"))
        .args(["converge", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("PHASEPLANE_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds.start"));
}

#[test]
fn empty_tile_file_decomposes_to_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let tiles = dir.path().join("tiles.json");
    let defaults = phaseplane_cli::config::ExperimentConfig::default();
    let empty = serde_json::json!({ "grid": defaults.grid, "universe": defaults.universe, "tiles": [] });
    std::fs::write(&tiles, empty.to_string()).unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, serde_json::json!({ "decompose": { "tiles": tiles } }).to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = phaseplane(&["decompose"], &config, &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trees = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().contains("decompose-trees-"))
        .unwrap();
    assert_eq!(std::fs::read_to_string(trees).unwrap().lines().count(), 1);
}

#[test]
fn manifest_lists_every_artifact_with_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, "{}").unwrap();
    let out_dir = dir.path().join("out");
    let out = phaseplane(&["converge"], &config, &out_dir);
    assert!(out.status.success());
    let manifest = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("manifest-"))
        .unwrap();
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(manifest).unwrap()).unwrap();
    let artifacts = m["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 2);
    for a in artifacts {
        assert!(out_dir.join(a["file"].as_str().unwrap()).exists());
        assert_eq!(a["sha256"].as_str().unwrap().len(), 64);
    }
    assert!(out_dir.join(m["config_file"].as_str().unwrap()).exists());
}
