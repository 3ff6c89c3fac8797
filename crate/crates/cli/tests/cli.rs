use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn mourrekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mourrekit")).args(args).output().expect("binary runs")
}

fn write_conf(dir: &Path, text: &str) -> String {
    let path = dir.join("s.conf");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn list_shows_bundled_scenarios() {
    let out = mourrekit(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["kato-family", "paper-default", "quick", "twoparticle-slab"]);
}

#[test]
fn empty_module_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_conf(dir.path(), "name = x\nmodules =\n");
    let out = mourrekit(&["run", &conf, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no modules selected"));
}

#[test]
fn unknown_key_reports_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_conf(dir.path(), "name = x\n\ngrid.nn = 3\n");
    let out = mourrekit(&["run", &conf, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("`grid.nn`"), "{err}");
}

#[test]
fn bad_value_and_zero_threads_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_conf(dir.path(), "grid.n = many\n");
    let out = mourrekit(&["run", &conf, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = mourrekit(&["run", "quick", "--threads", "0", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_run_writes_matching_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = mourrekit(&["run", "quick", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let mut names = Vec::new();
    for line in manifest.lines() {
        let (hash, name) = line.split_once("  ").unwrap();
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), hash, "{name}");
        names.push(name);
    }
    assert!(names.contains(&"report.json"));
    assert!(names.windows(2).all(|w| w[0] < w[1]));

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"]["name"], "quick");
    assert_eq!(report["passed"], true);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS hard kato.two_path")), "{stdout}");
}

#[test]
fn seed_override_changes_random_scenarios_only() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_conf(dir.path(), "name = m\nmodules = mourre\ngrid.n = 48\ngrid.refine = 96\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(mourrekit(&["run", &conf, "--out", a.to_str().unwrap()]).status.success());
    assert!(mourrekit(&["run", &conf, "--seed", "99", "--out", b.to_str().unwrap()]).status.success());
    let ra: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    let rb: serde_json::Value = serde_json::from_slice(&std::fs::read(b.join("report.json")).unwrap()).unwrap();
    assert_eq!(ra["mourre"], rb["mourre"]);
    assert_eq!(rb["scenario"]["seed"], 99);
}
