//! CSV ingestion: a `timestamp` column plus one numeric column per zone.

use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use regex::Regex;

use super::config::{Co2Unit, DataConfig};
use super::HarnessError;
use crate::building::PPM_TO_MASS_FRACTION;
use crate::calendar::Calendar;
use crate::occupancy::STEP_HOURS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    /// Converted to mass fraction.
    Co2,
    Occupancy,
    Weather,
}

/// Columns on a regular grid. Time zero is midnight of the first row's date.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneTable {
    pub origin: NaiveDate,
    pub calendar: Calendar,
    /// Hours after `origin` of the first row.
    pub start: f64,
    pub step: f64,
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ZoneTable {
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&Vec<Option<f64>>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_cell(s: &str) -> Result<Option<f64>, ()> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| ())
}

pub fn ingest_csv(path: &Path, kind: SeriesKind, data: &DataConfig) -> Result<ZoneTable, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    parse_csv(&text, kind, data).map_err(|e| match e {
        HarnessError::Data(m) => HarnessError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_csv(text: &str, kind: SeriesKind, data: &DataConfig) -> Result<ZoneTable, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| HarnessError::Data(format!("header: {e}")))?.clone();
    let ts_col = headers
        .iter()
        .position(|h| h.trim() == data.timestamp_column)
        .ok_or_else(|| HarnessError::Data(format!("no `{}` column in the header", data.timestamp_column)))?;
    let pattern = Regex::new(&data.zone_pattern).map_err(|e| HarnessError::Config(format!("data.zone_pattern: {e}")))?;
    let cols: Vec<usize> = (0..headers.len()).filter(|&i| i != ts_col && pattern.is_match(headers[i].trim())).collect();
    if cols.is_empty() {
        return Err(HarnessError::Data("no data columns match data.zone_pattern".into()));
    }
    let scale = match (kind, data.co2_unit) {
        (SeriesKind::Co2, Co2Unit::Ppm) => PPM_TO_MASS_FRACTION,
        _ => 1.0,
    };

    let mut rows: Vec<(NaiveDateTime, u64, Vec<Option<f64>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            HarnessError::Data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let ts = parse_timestamp(&rec[ts_col])
            .ok_or_else(|| HarnessError::Data(format!("line {line}: unparseable timestamp `{}`", &rec[ts_col])))?;
        let vals = cols
            .iter()
            .map(|&i| {
                parse_cell(&rec[i])
                    .map(|v| v.map(|x| x * scale))
                    .map_err(|_| HarnessError::Data(format!("line {line}: unparseable value `{}` in `{}`", &rec[i], &headers[i])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some((prev, _, _)) = rows.last() {
            if ts <= *prev {
                return Err(HarnessError::Data(format!("line {line}: timestamps are not strictly increasing")));
            }
        }
        rows.push((ts, line, vals));
    }
    let Some((first, _, _)) = rows.first() else {
        return Err(HarnessError::Data("no data rows".into()));
    };
    let origin = first.date();
    let first = *first;
    let step_secs = (STEP_HOURS * 3600.0).round() as i64;
    let start_secs = first.time().num_seconds_from_midnight() as i64;
    if start_secs % step_secs != 0 {
        return Err(HarnessError::Data(format!("line {}: timestamp is not on the {STEP_HOURS} h grid", rows[0].1)));
    }
    let last_offset = (rows.last().expect("non-empty").0 - first).num_seconds();
    let n = (last_offset / step_secs) as usize + 1;
    let mut values = vec![vec![None; n]; cols.len()];
    for (ts, line, vals) in &rows {
        let off = (*ts - first).num_seconds();
        if off % step_secs != 0 {
            return Err(HarnessError::Data(format!("line {line}: timestamp is not on the {STEP_HOURS} h grid")));
        }
        let k = (off / step_secs) as usize;
        for (c, v) in vals.iter().enumerate() {
            if let Some(x) = v {
                if kind != SeriesKind::Weather && *x < 0.0 {
                    return Err(HarnessError::Data(format!("line {line}: negative value in `{}`", &headers[cols[c]])));
                }
            }
            values[c][k] = *v;
        }
    }
    Ok(ZoneTable {
        origin,
        calendar: Calendar::starting_on(origin.weekday()),
        start: start_secs as f64 / 3600.0,
        step: STEP_HOURS,
        names: cols.iter().map(|&i| headers[i].trim().to_string()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occ(text: &str) -> Result<ZoneTable, HarnessError> {
        parse_csv(text, SeriesKind::Occupancy, &DataConfig::default())
    }

    #[test]
    fn two_rows() {
        let t = occ("timestamp,z1\n2024-01-01T00:00:00,1\n2024-01-01T00:15:00,2\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.values[0], vec![Some(1.0), Some(2.0)]);
        assert_eq!(t.calendar.epoch_weekday, 0);
    }

    #[test]
    fn gap_becomes_missing() {
        let t = occ("timestamp,z1\n2024-01-01T08:00:00,1\n2024-01-01T08:30:00,3\n").unwrap();
        assert_eq!(t.values[0], vec![Some(1.0), None, Some(3.0)]);
        assert_eq!(t.start, 8.0);
    }

    #[test]
    fn empty_cell_is_missing() {
        let t = occ("timestamp,z1,z2\n2024-01-01T00:00:00,,2\n").unwrap();
        assert_eq!(t.values, vec![vec![None], vec![Some(2.0)]]);
    }

    #[test]
    fn shuffled_rows_name_the_line() {
        let err = occ("timestamp,z1\n2024-01-01T00:15:00,1\n2024-01-01T00:00:00,2\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("increasing"));
    }

    #[test]
    fn bad_value_names_the_line() {
        let err = occ("timestamp,z1\n2024-01-01T00:00:00,1\n2024-01-01T00:15:00,abc\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn off_grid_is_rejected() {
        assert!(occ("timestamp,z1\n2024-01-01T00:00:00,1\n2024-01-01T00:10:00,1\n").is_err());
    }

    #[test]
    fn ppm_is_converted() {
        let t = parse_csv("timestamp,z1\n2024-01-01 00:00,400\n", SeriesKind::Co2, &DataConfig::default()).unwrap();
        assert!((t.values[0][0].unwrap() - 400.0 * PPM_TO_MASS_FRACTION).abs() < 1e-15);
    }

    #[test]
    fn zone_pattern_selects_columns() {
        let data = DataConfig { zone_pattern: "^zone_".into(), ..Default::default() };
        let t = parse_csv("timestamp,zone_1,other\n2024-01-03T00:00:00Z,1,5\n", SeriesKind::Occupancy, &data).unwrap();
        assert_eq!(t.names, vec!["zone_1".to_string()]);
        assert_eq!(t.calendar.epoch_weekday, 2);
    }
}
