//! Result files. Numbers are written with fixed precision so that identical
//! results give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::experiment::{FitRow, RmseRow};
use super::ingest::ZoneTable;
use super::HarnessError;
use crate::building::PPM_TO_MASS_FRACTION;
use crate::mpc::closed_loop::{BenchmarkRow, ClosedLoopResult};
use crate::occupancy::OccupancySeries;

fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<String, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Data(format!("cannot create `{}`: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| HarnessError::Data(format!("cannot write `{}`: {e}", path.display())))?;
    Ok(name.to_string())
}

/// `summary.csv` (one row per scenario and zone), `totals.csv` and the
/// long-format `long.csv` with one row per scenario, zone and metric.
pub fn write_summary(dir: &Path, rows: &[BenchmarkRow]) -> Result<Vec<String>, HarnessError> {
    let mut summary = String::from("scenario,zone,discomfort_kh,energy_kwh,energy_reduction_pct\n");
    let mut totals = summary.clone();
    let mut long = String::from("scenario,zone,metric,value\n");
    for r in rows {
        let line = format!(
            "{},{},{},{},{}\n",
            r.scenario.tag(),
            r.zone,
            num(r.discomfort_kh),
            num(r.energy_kwh),
            num(r.energy_reduction_pct)
        );
        if r.zone == "total" {
            totals.push_str(&line);
            continue;
        }
        summary.push_str(&line);
        for (metric, v) in
            [("discomfort_kh", r.discomfort_kh), ("energy_kwh", r.energy_kwh), ("energy_reduction_pct", r.energy_reduction_pct)]
        {
            let _ = writeln!(long, "{},{},{metric},{}", r.scenario.tag(), r.zone, num(v));
        }
    }
    Ok(vec![write(dir, "summary.csv", &summary)?, write(dir, "totals.csv", &totals)?, write(dir, "long.csv", &long)?])
}

/// Per-step plant states, controls and bands of one run. The last row holds
/// the final state without a control.
pub fn write_trajectory(dir: &Path, res: &ClosedLoopResult, zones: &[String]) -> Result<String, HarnessError> {
    let mut s = String::from("time");
    for z in zones {
        for c in ["tz", "tw", "tr", "co2_ppm", "air", "water", "occupancy", "assumed_occupancy", "lower", "upper"] {
            let _ = write!(s, ",{c}_{z}");
        }
    }
    s.push('\n');
    for (k, t) in res.times.iter().enumerate() {
        s.push_str(&num(*t));
        for z in 0..zones.len() {
            let x = &res.states[k][z];
            let _ = write!(s, ",{},{},{},{}", num(x.tz), num(x.tw), num(x.tr), num(x.x / PPM_TO_MASS_FRACTION));
            if k < res.controls.len() {
                let u = &res.controls[k][z];
                let b = &res.bands[k][z];
                let _ = write!(
                    s,
                    ",{},{},{},{},{},{}",
                    num(u.air),
                    num(u.water),
                    num(res.occupancy[k][z]),
                    num(res.assumed_occupancy[k][z]),
                    num(b.lower),
                    num(b.upper)
                );
            } else {
                s.push_str(",,,,,,");
            }
        }
        s.push('\n');
    }
    write(dir, &format!("trajectory_{}.csv", res.scenario.tag()), &s)
}

pub fn write_rmse(dir: &Path, rows: &[RmseRow]) -> Result<String, HarnessError> {
    let mut s = String::from("zone,predictor,summed_rmse\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.zone, r.predictor, num(r.summed_rmse));
    }
    write(dir, "rmse.csv", &s)
}

pub fn write_fit(dir: &Path, rows: &[FitRow]) -> Result<String, HarnessError> {
    let mut s = String::from("zone,weekday,sigma2,periodic_ell,damping_ell,noise_var,nlml,hit_iteration_cap\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.zone,
            r.weekday,
            num(r.sigma2),
            num(r.periodic_ell),
            num(r.damping_ell),
            num(r.noise_var),
            r.nlml.map(num).unwrap_or_default(),
            r.hit_iteration_cap
        );
    }
    write(dir, "fit.csv", &s)
}

/// Occupancy estimates in the input CSV shape: timestamp, then one column
/// per zone; negative estimates are reported as zero.
pub fn write_occupancy(dir: &Path, table: &ZoneTable, series: &[OccupancySeries]) -> Result<String, HarnessError> {
    let mut s = String::from("timestamp");
    for n in &table.names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    let origin = table.origin.and_hms_opt(0, 0, 0).expect("midnight exists");
    let reported: Vec<Vec<Option<f64>>> = series.iter().map(OccupancySeries::reported).collect();
    for k in 0..table.len() {
        let ts = origin + chrono::Duration::seconds((table.time(k) * 3600.0).round() as i64);
        s.push_str(&ts.format("%Y-%m-%dT%H:%M:%S").to_string());
        for r in &reported {
            s.push(',');
            if let Some(v) = r[k] {
                s.push_str(&num(v));
            }
        }
        s.push('\n');
    }
    write(dir, "occupancy_estimate.csv", &s)
}
