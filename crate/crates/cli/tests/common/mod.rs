#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const DEFAULTS: &str = include_str!("../../../../scenarios/paper_v.json");

pub fn defaults() -> Value {
    serde_json::from_str(DEFAULTS).unwrap()
}

/// Two users and short loops.
pub fn small() -> Value {
    let mut v = defaults();
    v["power"]["users"] = json!(2);
    v["trials"] = json!({"simulate": 4, "dataset": 40});
    v["train"]["epochs"] = json!(5);
    v["train"]["hidden"] = json!(16);
    v["outage"]["trials"] = json!(20000);
    v["outage"]["densities"] = json!([0.0, 0.05]);
    v["sweep"] = json!({
        "trials": 4,
        "train_samples": 30,
        "snr_db": [90.0, 100.0],
        "sinr_min_db": [0.0, 10.0],
        "power_dbm": [10.0, 20.0],
        "pas": [4, 8],
        "grid_resolution": [8, 16]
    });
    v
}

pub fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn passlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_passlab")).args(args).output().unwrap()
}

/// Runs `passlab <command> --config <config> --out <out> <extra...>`.
pub fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    passlab(&args)
}

pub fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Data rows of a CSV written by the tool, header excluded.
pub fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    csv::Reader::from_reader(body.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

/// `result` column of a long-format sweep CSV.
pub fn sweep_value(rows: &[Vec<String>], value: &str, variant: &str, metric: &str) -> f64 {
    rows.iter()
        .find(|r| r[1] == value && r[2] == variant && r[3] == metric)
        .unwrap_or_else(|| panic!("no row {value} {variant} {metric}"))[4]
        .parse()
        .unwrap()
}
