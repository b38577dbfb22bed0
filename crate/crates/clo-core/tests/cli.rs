//! CLI failure-path behavior: distinct exit codes per failure class.

use std::process::Command;

fn clo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_clo"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn config_validation_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let out = clo(&["init-config", "--out", &config.display().to_string()]);
    assert!(out.status.success());

    // An out-of-range trade-off parameter is a config error.
    let dataset = dir.path().join("d.jsonl");
    let gen = clo(&[
        "gen-data",
        "--config",
        &config.display().to_string(),
        "--out",
        &dataset.display().to_string(),
    ]);
    assert!(gen.status.success());
    let base = dir.path().join("missing-base.ckpt");
    std::fs::write(&base, "").unwrap();
    let out = clo(&[
        "train",
        "--config",
        &config.display().to_string(),
        "--data",
        &dataset.display().to_string(),
        "--base",
        &base.display().to_string(),
        "--lambda",
        "1.5",
        "--out",
        &dir.path().join("m.ckpt").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    clo(&["init-config", "--out", &config.display().to_string()]);
    let out = clo(&[
        "eval",
        "--config",
        &config.display().to_string(),
        "--checkpoint",
        "/nonexistent/model.ckpt",
        "--out-dir",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupted_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    clo(&["init-config", "--out", &config.display().to_string()]);
    let dataset = dir.path().join("d.jsonl");
    clo(&[
        "gen-data",
        "--config",
        &config.display().to_string(),
        "--out",
        &dataset.display().to_string(),
    ]);
    // Truncate the dataset body.
    let text = std::fs::read_to_string(&dataset).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(&dataset, lines[..lines.len() - 3].join("\n") + "\n").unwrap();
    let out = clo(&[
        "prepare",
        "--dataset",
        &dataset.display().to_string(),
        "--out",
        &dir.path().join("s.jsonl").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn replay_detects_changed_input_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    clo(&["init-config", "--out", &config.display().to_string()]);
    let dataset = dir.path().join("d.jsonl");
    clo(&[
        "gen-data",
        "--config",
        &config.display().to_string(),
        "--out",
        &dataset.display().to_string(),
    ]);
    let splits = dir.path().join("s.jsonl");
    let out = clo(&[
        "prepare",
        "--dataset",
        &dataset.display().to_string(),
        "--out",
        &splits.display().to_string(),
    ]);
    assert!(out.status.success());
    // Tamper with the recorded input, then replay.
    let mut text = std::fs::read_to_string(&dataset).unwrap();
    text.push('\n');
    std::fs::write(&dataset, text).unwrap();
    let out = clo(&[
        "replay",
        "--manifest",
        &dir.path().join("s.jsonl.manifest.json").display().to_string(),
        "--out-dir",
        &dir.path().join("replayed").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    clo(&["init-config", "--out", &config.display().to_string()]);
    let text = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&config, text.replacen("\"run_id\"", "\"typo_id\"", 1)).unwrap();
    let out = clo(&[
        "gen-data",
        "--config",
        &config.display().to_string(),
        "--out",
        &dir.path().join("d.jsonl").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
