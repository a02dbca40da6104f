mod common;

use std::fs;

use common::*;
use serde_json::{json, Value};
use tempfile::tempdir;

#[test]
fn usage_errors_exit_one() {
    assert_eq!(passlab(&[]).status.code(), Some(1));
    assert_eq!(passlab(&["fly", "--config", "x", "--out", "y"]).status.code(), Some(1));
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    assert_eq!(run("sweep", &cfg, &dir.path().join("o"), &[]).status.code(), Some(1));
    assert_eq!(run("simulate", &cfg, &dir.path().join("o"), &["--mode", "trained"]).status.code(), Some(1));
    assert_eq!(run("train", &cfg, &dir.path().join("o"), &[]).status.code(), Some(1));
    assert_eq!(passlab(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run("simulate", &dir.path().join("missing.json"), &out, &[]).status.code(), Some(2));

    let mut v = small();
    v["radio"]["colour"] = json!("blue");
    let o = run("simulate", &write_config(dir.path(), &v), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let mut v = small();
    v["geometry"]["pas_per_waveguide"] = json!(0);
    assert_eq!(run("simulate", &write_config(dir.path(), &v), &out, &[]).status.code(), Some(2));

    fs::write(dir.path().join("broken.json"), "{\n  \"seed\": 1,\n  oops\n}").unwrap();
    let o = run("simulate", &dir.path().join("broken.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn simulate_defaults_emit_one_row_per_user() {
    let dir = tempdir().unwrap();
    let mut v = defaults();
    v["trials"]["simulate"] = json!(2);
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("o");
    ok(&run("simulate", &cfg, &out, &[]));
    let text = fs::read_to_string(out.join("simulate.csv")).unwrap();
    assert!(text.starts_with("trial,user,codeword,probe_codeword,sinr,rate,sum_rate\r\n"));
    assert!(text.ends_with("# manifest=manifest.json\r\n"));
    let r = rows(&out.join("simulate.csv"));
    assert_eq!(r.len(), 2 * 8);
    for trial in r.chunks(8) {
        let total: f64 = trial.iter().map(|row| row[5].parse::<f64>().unwrap()).sum();
        let sum_rate: f64 = trial[0][6].parse().unwrap();
        assert!((total - sum_rate).abs() < 1e-9);
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"], json!(["simulate.csv"]));
    assert_eq!(manifest["seed"], json!(2025));
}

#[test]
fn single_user_oracle_matches_codebook_maximum() {
    let dir = tempdir().unwrap();
    let mut v = small();
    v["power"]["users"] = json!(1);
    let cfg = write_config(dir.path(), &v);
    ok(&run("simulate", &cfg, &dir.path().join("o"), &["--seed", "9"]));
    for mode in ["random", "oracle"] {
        ok(&run("simulate", &cfg, &dir.path().join(mode), &["--mode", mode]));
    }
}

#[test]
fn dataset_split_version_and_reproducibility() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run("dataset", &cfg, &a, &["--count", "10"]));
    ok(&run("dataset", &cfg, &b, &["--count", "10"]));
    let text = fs::read_to_string(a.join("dataset.jsonl")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("dataset.jsonl")).unwrap());
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    let count = |s: &str| lines.iter().filter(|l| l["split"] == s).count();
    assert_eq!((count("train"), count("val"), count("test")), (7, 1, 2));
    for l in &lines {
        assert_eq!(l["v"], 1);
        assert_eq!(l["labels"].as_array().unwrap().len(), 2);
        assert_eq!(l["user_positions"].as_array().unwrap().len(), 2);
    }
    assert_eq!(run("dataset", &cfg, &a, &["--count", "0"]).status.code(), Some(1));
}

#[test]
fn train_and_eval_pipeline() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let data = dir.path().join("d");
    ok(&run("dataset", &cfg, &data, &[]));
    let dataset = data.join("dataset.jsonl");
    let dataset = dataset.to_str().unwrap();
    let t = dir.path().join("t");
    ok(&run("train", &cfg, &t, &["--dataset", dataset]));
    let loss = rows(&t.join("loss.csv"));
    assert_eq!(loss.len(), 5);
    assert_eq!(loss[0].len(), 1 + 2 + 2 + 1);
    let params = t.join("params.json");
    let params = params.to_str().unwrap();

    let e = dir.path().join("e");
    ok(&run("eval", &cfg, &e, &["--dataset", dataset]));
    let r = rows(&e.join("eval.csv"));
    assert_eq!(r[1][1..], ["top_s_accuracy".to_string(), "1".into(), "1".into()]);
    assert_eq!(r[3][1..], ["sum_rate_ratio".to_string(), "".into(), "1".into()]);

    ok(&run("eval", &cfg, &e, &["--dataset", dataset, "--mode", "trained", "--params", params]));
    ok(&run("simulate", &cfg, &e, &["--mode", "trained", "--params", params]));

    // Parameters for another user count are rejected.
    let mut other = small();
    other["power"]["users"] = json!(3);
    let other = write_config(&dir.path().join("e"), &other);
    assert_eq!(run("simulate", &other, &e, &["--mode", "trained", "--params", params]).status.code(), Some(3));

    fs::write(dir.path().join("bad.jsonl"), "{\"v\":2}\n").unwrap();
    assert_eq!(
        run("train", &cfg, &t, &["--dataset", dir.path().join("bad.jsonl").to_str().unwrap()]).status.code(),
        Some(3)
    );
}

#[test]
fn training_divergence_is_a_runtime_error() {
    let dir = tempdir().unwrap();
    let mut v = small();
    v["train"]["learning_rate"] = json!(1e300);
    let cfg = write_config(dir.path(), &v);
    let data = dir.path().join("d");
    ok(&run("dataset", &cfg, &data, &[]));
    let o = run("train", &cfg, &dir.path().join("t"), &["--dataset", data.join("dataset.jsonl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn outage_rows_and_degenerate_grid() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&run("outage", &write_config(dir.path(), &small()), &out, &[]));
    let text = fs::read_to_string(out.join("outage.csv")).unwrap();
    assert!(text.starts_with("phi1,p_max_dbm,mc_estimate,ci_halfwidth,closed_form,full_regime,conventional,gap,ordering\r\n"));
    assert!(text.contains("# ordering=PASS\r\n"));
    let r = rows(&out.join("outage.csv"));
    assert_eq!(r[0][..3], ["0".to_string(), "20".into(), "0".into()]);
    assert_eq!((r[0][4].as_str(), r[0][6].as_str(), r[0][8].as_str()), ("0", "0", "equal"));
    assert_eq!(r[1][8], "less");

    let mut v = small();
    v["outage"]["policy"] = json!("degenerate");
    ok(&run("outage", &write_config(dir.path(), &v), &out, &[]));
    assert!(rows(&out.join("outage.csv")).iter().all(|row| row[8] == "equal" && row[7] == "0"));
}

#[test]
fn outage_violation_exits_four() {
    let dir = tempdir().unwrap();
    let mut v = small();
    v["outage"]["conventional_site"] = json!([15.0, 6.0, 1.0]);
    let out = dir.path().join("o");
    let o = run("outage", &write_config(dir.path(), &v), &out, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(fs::read_to_string(out.join("outage.csv")).unwrap().contains("# ordering=FAIL"));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn sweeps_cover_every_axis_and_variant() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("o");
    for axis in ["snr", "sinr-min", "power", "L", "grid-resolution"] {
        ok(&run("sweep", &cfg, &out, &["--axis", axis]));
        let r = rows(&out.join(format!("sweep_{axis}.csv")));
        for variant in ["oracle-PASS", "trained-PASS", "fixed-antenna"] {
            assert!(r.iter().any(|row| row[0] == axis && row[2] == variant), "{axis} {variant}");
        }
        assert!(out.join(format!("timing_{axis}.csv")).exists());
    }
    let r = rows(&out.join("sweep_sinr-min.csv"));
    assert!(r.iter().any(|row| row[3] == "sinr_feasible"));
}

#[test]
fn single_user_power_sweep_is_monotone() {
    let dir = tempdir().unwrap();
    let mut v = small();
    v["power"]["users"] = json!(1);
    v["sweep"]["train_samples"] = json!(0);
    v["sweep"]["power_dbm"] = json!([0.0, 10.0, 20.0, 30.0, 40.0]);
    let out = dir.path().join("o");
    ok(&run("sweep", &write_config(dir.path(), &v), &out, &["--axis", "power"]));
    let r = rows(&out.join("sweep_power.csv"));
    assert!(!r.iter().any(|row| row[2] == "trained-PASS"));
    for variant in ["oracle-PASS", "fixed-antenna"] {
        let rates: Vec<f64> = ["0", "10", "20", "30", "40"].iter().map(|p| sweep_value(&r, p, variant, "sum_rate")).collect();
        assert!(rates.windows(2).all(|w| w[1] >= w[0]), "{variant}: {rates:?}");
    }
}

#[test]
fn manifest_hash_ignores_key_order() {
    let dir = tempdir().unwrap();
    let v = small();
    // serde_json maps are sorted, so the reversed document is built by hand.
    let body: Vec<String> = v.as_object().unwrap().iter().rev().map(|(k, val)| format!("{k:?}: {val}")).collect();
    let reversed = format!("{{{}}}", body.join(", "));
    let a = dir.path().join("a");
    fs::create_dir_all(&a).unwrap();
    let b = dir.path().join("b");
    fs::create_dir_all(&b).unwrap();
    ok(&run("outage", &write_config(&a, &v), &a.join("o"), &[]));
    fs::write(b.join("config.json"), &reversed).unwrap();
    ok(&run("outage", &b.join("config.json"), &b.join("o"), &[]));
    let hash = |p: &std::path::Path| -> Value {
        let m: Value = serde_json::from_str(&fs::read_to_string(p.join("o/manifest.json")).unwrap()).unwrap();
        m["config_hash"].clone()
    };
    assert_eq!(hash(&a), hash(&b));
}
