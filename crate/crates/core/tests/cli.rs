use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lfmpc::harness::cli::run;
use lfmpc::harness::manifest::{sha256_hex, RunManifest};
use lfmpc::harness::ExperimentConfig;

fn lfmpc(args: &[&str]) -> i32 {
    run(std::iter::once("lfmpc").chain(args.iter().copied()))
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn wide_band_and_empty_building_give_zero_discomfort() {
    let dir = tempfile::tempdir().unwrap();
    let mut toml = String::from("span_days = 2\nhistory_weeks = 1\nscenarios = [\"exact\"]\n");
    for mode in ["comfort", "pre_comfort", "economy"] {
        let _ = write!(toml, "[schedule.{mode}]\nlower = 10.0\nupper = 35.0\n");
    }
    for z in ExperimentConfig::default().building.zones {
        let _ = write!(toml, "[occupancy.{}]\npresence = 0.0\n", z.name);
    }
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, &toml).unwrap();
    let out = dir.path().join("out");
    assert_eq!(lfmpc(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|l| l.starts_with("exact,") && l.split(',').nth(2) == Some("0.000000")), "{summary}");

    let m = manifest(&out);
    assert_eq!(m.command, "simulate");
    assert_eq!(m.config_hash, sha256_hex(toml.as_bytes()));
    for f in &m.outputs {
        let bytes = fs::read(out.join(&f.file)).unwrap();
        assert_eq!((f.bytes, f.sha256.as_str()), (bytes.len() as u64, sha256_hex(&bytes).as_str()));
    }
    assert!(m.outputs.iter().any(|f| f.file == "trajectory_exact.csv"));
}

#[test]
fn estimate_reads_csv_and_writes_one_row_per_input_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("timestamp,office,ambient\n");
    for k in 0..96 {
        let ppm = if (36..68).contains(&k) { 800.0 } else { 420.0 };
        let _ = writeln!(csv, "2024-01-08T{:02}:{:02}:00,{ppm},3.0", k / 4, (k % 4) * 15);
    }
    fs::write(dir.path().join("co2.csv"), csv).unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[data]\nco2 = \"co2.csv\"\nzone_pattern = \"^office$\"\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(lfmpc(&["estimate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);

    let est = fs::read_to_string(out.join("occupancy_estimate.csv")).unwrap();
    let lines: Vec<&str> = est.lines().collect();
    assert_eq!(lines[0], "timestamp,office");
    assert_eq!(lines.len(), 97);
    assert!(lines[1].starts_with("2024-01-08T00:00:00,"));
    let mid: f64 = lines[50].split(',').nth(1).unwrap().parse().unwrap();
    assert!(mid > 1.0, "occupied plateau estimated at {mid}");
}

#[test]
fn malformed_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("co2.csv"), "timestamp,office\n2024-01-08T00:00:00,420\n2024-01-08T00:15:00,abc\n").unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[data]\nco2 = \"co2.csv\"\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(lfmpc(&["estimate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 3);
}

#[test]
fn unknown_keys_warn_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "seed = 5\nspan_dayz = 3\n").unwrap();
    let out = dir.path().join("out");
    let args = |strict: bool| {
        let mut a = vec!["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if strict {
            a.push("--strict");
        }
        lfmpc(&a)
    };
    assert_eq!(args(true), 2);
    assert_eq!(args(false), 0);
    assert_eq!(manifest(&out).seed, 5);
    assert!(fs::read_to_string(out.join("verify.csv")).unwrap().lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[schedule.comfort]\nlower = 25.0\nupper = 20.0\n").unwrap();
    assert_eq!(lfmpc(&["verify", "--config", cfg.to_str().unwrap()]), 2);
    assert_eq!(lfmpc(&["benchmark", "--scenario", "psychic", "--out", dir.path().to_str().unwrap()]), 2);
}
