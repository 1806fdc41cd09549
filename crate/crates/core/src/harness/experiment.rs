//! Builds simulation inputs from a configuration and runs the experiments
//! behind each subcommand.

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::ingest::ZoneTable;
use super::HarnessError;
use crate::building::{generate_occupancy, synthetic_weather, Building, DisturbanceTrace, ZoneState};
use crate::calendar::{Calendar, HOURS_PER_DAY};
use crate::mpc::closed_loop::ClosedLoopSetup;
use crate::occupancy::{
    build_bank, prediction_rmse, LfmPredictor, OccupancySeries, WeekdayBank, ZeroOrderHold, STEP_HOURS, WEEKDAY_NAMES,
};

/// Occupancy and weather inputs common to every subcommand.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub calendar: Calendar,
    pub start: f64,
    /// `occupancy[zone][k]`; gaps only come from CSV data.
    pub occupancy: Vec<Vec<Option<f64>>>,
    pub ambient: Option<Vec<f64>>,
}

fn steps_per_day() -> usize {
    (HOURS_PER_DAY / STEP_HOURS).round() as usize
}

fn zone_names(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.building.zones.iter().map(|z| z.name.clone()).collect()
}

/// Occupancy for `days` days: from the CSV table when given, otherwise
/// generated from the zone profiles.
pub fn occupancy_inputs(cfg: &ExperimentConfig, seed: u64, days: usize, table: Option<&ZoneTable>) -> Result<Inputs, HarnessError> {
    let len = days * steps_per_day();
    match table {
        Some(t) => {
            if (t.step - STEP_HOURS).abs() > 1e-9 {
                return Err(HarnessError::Data(format!("occupancy data must be sampled every {STEP_HOURS} h")));
            }
            if t.len() < len {
                return Err(HarnessError::Data(format!(
                    "occupancy data covers {} steps, {len} are required",
                    t.len()
                )));
            }
            let occupancy = zone_names(cfg)
                .iter()
                .map(|name| {
                    t.column(name)
                        .map(|c| c[..len].to_vec())
                        .ok_or_else(|| HarnessError::Data(format!("occupancy data has no column for zone `{name}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Inputs { calendar: t.calendar, start: t.start, occupancy, ambient: None })
        }
        None => {
            let occupancy = cfg
                .building
                .zones
                .iter()
                .enumerate()
                .map(|(z, zone)| {
                    generate_occupancy(seed, z as u64, 0.0, days, STEP_HOURS, &cfg.calendar, &cfg.profile(&zone.name))
                        .map(|v| v.into_iter().map(Some).collect())
                })
                .collect::<crate::error::Result<Vec<_>>>()?;
            Ok(Inputs { calendar: cfg.calendar, start: 0.0, occupancy, ambient: None })
        }
    }
}

fn ambient_trace(cfg: &ExperimentConfig, seed: u64, start: f64, len: usize, weather: Option<&ZoneTable>) -> Result<Vec<f64>, HarnessError> {
    match weather {
        None => Ok(synthetic_weather(seed, start, len, STEP_HOURS, &cfg.weather)),
        Some(t) => {
            let col = t
                .column(&cfg.data.ambient_column)
                .ok_or_else(|| HarnessError::Data(format!("weather data has no `{}` column", cfg.data.ambient_column)))?;
            let offset = ((start - t.start) / t.step).round();
            if offset < 0.0 || (t.step - STEP_HOURS).abs() > 1e-9 {
                return Err(HarnessError::Data("weather data must start no later than the occupancy data on the same grid".into()));
            }
            let offset = offset as usize;
            if offset + len > col.len() {
                return Err(HarnessError::Data(format!("weather data covers {} steps, {} are required", col.len(), offset + len)));
            }
            // Gaps hold the last known value.
            let mut last = col[..=offset].iter().rev().flatten().next().copied();
            col[offset..offset + len]
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    if v.is_some() {
                        last = *v;
                    }
                    last.ok_or_else(|| HarnessError::Data(format!("weather data has no value at or before step {k}")))
                })
                .collect()
        }
    }
}

/// Bank per zone from the first `len` samples of each occupancy series.
pub fn zone_banks(cfg: &ExperimentConfig, inputs: &Inputs, len: usize, fit: bool) -> Result<Vec<WeekdayBank>, HarnessError> {
    inputs
        .occupancy
        .par_iter()
        .map(|occ| {
            let series = OccupancySeries {
                start: inputs.start,
                step: STEP_HOURS,
                values: occ[..len].to_vec(),
                variance: vec![0.0; len],
            };
            build_bank(&series, &cfg.bank.template, cfg.bank.noise_var, fit, inputs.calendar)
        })
        .collect::<crate::error::Result<Vec<_>>>()
        .map_err(HarnessError::from)
}

/// Closed-loop inputs: `history_weeks` of occupancy feed the banks and the
/// latent states, then `span_days` are controlled.
pub fn closed_loop_setup(
    cfg: &ExperimentConfig,
    seed: u64,
    occupancy: Option<&ZoneTable>,
    weather: Option<&ZoneTable>,
) -> Result<ClosedLoopSetup, HarnessError> {
    if (cfg.ocp.step - STEP_HOURS).abs() > 1e-9 {
        return Err(HarnessError::Config(format!("ocp.step: must equal the {STEP_HOURS} h data grid")));
    }
    let history_days = cfg.history_weeks * 7;
    // One extra day covers the prediction horizon at the end of the span.
    let days = history_days + cfg.span_days + 1;
    let inputs = occupancy_inputs(cfg, seed, days, occupancy)?;
    let len = days * steps_per_day();
    let start_index = history_days * steps_per_day();
    let ambient = ambient_trace(cfg, seed, inputs.start, len, weather)?;
    let banks = zone_banks(cfg, &inputs, start_index, cfg.bank.fit)?;
    let model: Building = cfg.building()?;
    let plant = if cfg.simulation.mismatch > 0.0 { model.perturbed(cfg.simulation.mismatch, seed) } else { model.clone() };
    let x0 = vec![ZoneState::uniform(cfg.simulation.initial_temperature, model.supply.co2); model.n_zones()];
    Ok(ClosedLoopSetup {
        trace: DisturbanceTrace {
            start: inputs.start,
            step: STEP_HOURS,
            ambient,
            occupancy: inputs.occupancy.iter().map(|o| o.iter().map(|v| v.unwrap_or(0.0).max(0.0)).collect()).collect(),
        },
        model,
        plant,
        start_index,
        steps: cfg.span_days * steps_per_day(),
        x0,
        ocp: cfg.ocp,
        schedule: cfg.schedule,
        calendar: inputs.calendar,
        plant_substeps: cfg.simulation.plant_substeps,
        banks,
        observer: cfg.observer,
        noise: cfg.simulation.noise,
        seed,
        water_only_energy: cfg.simulation.water_only_energy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub zone: String,
    pub predictor: String,
    pub summed_rmse: f64,
}

/// Summed horizon RMSE of the bank predictor and the persistence baseline
/// per zone, scored after `train_weeks`.
pub fn prediction_table(cfg: &ExperimentConfig, seed: u64, occupancy: Option<&ZoneTable>) -> Result<Vec<RmseRow>, HarnessError> {
    let days = match occupancy {
        Some(t) => t.len() / steps_per_day(),
        None => cfg.prediction.weeks * 7,
    };
    let train = cfg.prediction.train_weeks * 7 * steps_per_day();
    if days * steps_per_day() <= train {
        return Err(HarnessError::Data(format!("prediction needs more than {} weeks of occupancy", cfg.prediction.train_weeks)));
    }
    let inputs = occupancy_inputs(cfg, seed, days, occupancy)?;
    let banks = zone_banks(cfg, &inputs, train, cfg.bank.fit)?;
    let horizon = (cfg.prediction.horizon / STEP_HOURS).round() as usize;
    let names = zone_names(cfg);
    let rows = banks
        .into_par_iter()
        .zip(inputs.occupancy.par_iter())
        .zip(names.par_iter())
        .map(|((bank, occ), name)| -> crate::error::Result<[RmseRow; 2]> {
            let series =
                OccupancySeries { start: inputs.start, step: STEP_HOURS, values: occ.clone(), variance: vec![0.0; occ.len()] };
            let lfm = prediction_rmse(&mut LfmPredictor::new(bank), &series, horizon, train)?;
            let zoh = prediction_rmse(&mut ZeroOrderHold::default(), &series, horizon, train)?;
            Ok([
                RmseRow { zone: name.clone(), predictor: "lfm".into(), summed_rmse: lfm },
                RmseRow { zone: name.clone(), predictor: "zero_order_hold".into(), summed_rmse: zoh },
            ])
        })
        .collect::<crate::error::Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub zone: String,
    pub weekday: String,
    pub sigma2: f64,
    pub periodic_ell: f64,
    pub damping_ell: f64,
    pub noise_var: f64,
    pub nlml: Option<f64>,
    pub hit_iteration_cap: bool,
}

/// Fits one bank per zone on `history_weeks` of occupancy.
pub fn fit_table(cfg: &ExperimentConfig, seed: u64, occupancy: Option<&ZoneTable>) -> Result<Vec<FitRow>, HarnessError> {
    let days = match occupancy {
        Some(t) => t.len() / steps_per_day(),
        None => cfg.history_weeks * 7,
    };
    let inputs = occupancy_inputs(cfg, seed, days, occupancy)?;
    let banks = zone_banks(cfg, &inputs, days * steps_per_day(), true)?;
    let mut rows = Vec::new();
    for (bank, name) in banks.iter().zip(zone_names(cfg)) {
        for (d, m) in bank.models.iter().enumerate() {
            let (sigma2, periodic_ell, damping_ell) = match m.spec {
                crate::kernels::KernelSpec::QuasiPeriodic { periodic, damping } => (periodic.sigma2, periodic.ell, damping.ell),
                _ => unreachable!("bank templates are quasi-periodic"),
            };
            rows.push(FitRow {
                zone: name.clone(),
                weekday: WEEKDAY_NAMES[d].into(),
                sigma2,
                periodic_ell,
                damping_ell,
                noise_var: m.noise_var,
                nlml: m.fit_nlml,
                hit_iteration_cap: m.hit_iteration_cap,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setup_covers_history_and_span() {
        let cfg = ExperimentConfig { span_days: 2, history_weeks: 1, ..Default::default() };
        let s = closed_loop_setup(&cfg, 3, None, None).unwrap();
        assert_eq!(s.start_index, 7 * 96);
        assert_eq!(s.steps, 2 * 96);
        assert_eq!(s.trace.len(), 10 * 96);
        assert_eq!(s.banks.len(), 3);
        assert_eq!(s.model, s.plant);
    }

    #[test]
    fn mismatch_perturbs_the_plant_only() {
        let mut cfg = ExperimentConfig { span_days: 2, history_weeks: 1, ..Default::default() };
        cfg.simulation.mismatch = 0.1;
        let s = closed_loop_setup(&cfg, 3, None, None).unwrap();
        assert_eq!(s.model, cfg.building().unwrap());
        assert_ne!(s.model, s.plant);
    }
}
