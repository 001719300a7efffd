use std::path::Path;

use thz_ocdm::config::RunConfig;

fn bundled() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json")
}

#[test]
fn bundled_desk_config_matches_defaults() {
    let cfg = RunConfig::load(&bundled()).unwrap();
    assert_eq!(cfg, RunConfig::desk_default());
}

#[test]
fn bundled_config_round_trips() {
    let first = RunConfig::load(&bundled()).unwrap();
    let text = first.to_json_pretty();
    let second = RunConfig::from_json_str(&text).unwrap();
    assert_eq!(first, second);
    assert_eq!(text, second.to_json_pretty());
}

#[test]
fn missing_file_is_a_config_error() {
    let err = RunConfig::load(Path::new("/nonexistent/run.json")).unwrap_err();
    assert!(err.to_string().contains("config"));
}

#[test]
fn missing_field_is_named() {
    let text = RunConfig::desk_default().to_json_pretty().replace("\"max_velocity_mps\"", "\"max_vel\"");
    let err = RunConfig::from_json_str(&text).unwrap_err().to_string();
    assert!(err.contains("max_vel"), "{err}");
}
