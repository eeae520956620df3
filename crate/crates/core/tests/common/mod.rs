//! Shared fixtures for integration tests: a scaffolded offline workspace
//! (contract, 12-record dataset, mock scripts, config) plus small helpers.

use std::path::{Path, PathBuf};

use promptcal::cli::cmd_init_example;

/// A marker-format student answer.
#[allow(dead_code)]
pub fn marker_answer(checks: &str, label: &str) -> String {
    format!("[[ ## checks ## ]]\n{checks}\n[[ ## label ## ]]\n{label}\n[[ ## completed ## ]]")
}

/// Rewrite a JSON file in place.
pub fn patch_json(path: &Path, patch: impl FnOnce(&mut serde_json::Value)) {
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    patch(&mut value);
    let mut text = serde_json::to_string_pretty(&value).unwrap();
    text.push('\n');
    std::fs::write(path, text).unwrap();
}

/// Scaffold the demo workspace into `dir` and pin the execution date so
/// bundles are byte-reproducible. Returns the config path.
pub fn scaffold(dir: &Path) -> PathBuf {
    let files = cmd_init_example(dir).expect("init-example scaffolds");
    assert_eq!(files.len(), 5);
    let config = dir.join("config.json");
    patch_json(&config, |value| {
        value["execution_date"] = serde_json::json!("2026-01-01");
    });
    config
}

/// Replace the student and reflection scripts of a scaffolded workspace.
#[allow(dead_code)]
pub fn set_scripts(dir: &Path, student: &[String], reflection: &[String]) {
    let write = |name: &str, entries: &[String]| {
        let mut text = serde_json::to_string_pretty(&entries).unwrap();
        text.push('\n');
        std::fs::write(dir.join(name), text).unwrap();
    };
    write("student_script.json", student);
    write("reflection_script.json", reflection);
}

/// Every file under `root`, as (relative path, bytes), sorted by path.
pub fn dir_contents(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Count `full_eval` events in a trace file.
#[allow(dead_code)]
pub fn count_full_evals(trace_path: &Path) -> usize {
    std::fs::read_to_string(trace_path)
        .unwrap()
        .lines()
        .filter(|line| {
            serde_json::from_str::<serde_json::Value>(line).unwrap()["event"] == "full_eval"
        })
        .count()
}
