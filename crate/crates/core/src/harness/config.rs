//! Experiment configuration in TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::building::{Building, Coupling, OccupancyProfile, SupplyConditions, WeatherParams, ZoneParams};
use crate::calendar::Calendar;
use crate::kernels::KernelSpec;
use crate::lfm::ObserverConfig;
use crate::mpc::closed_loop::MeasurementNoise;
use crate::mpc::{ComfortSchedule, OcpConfig, Scenario};
use crate::occupancy::{default_template, EstimatorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Controlled span, days.
    pub span_days: usize,
    /// Occupancy history that precedes the span, weeks.
    pub history_weeks: usize,
    pub calendar: Calendar,
    pub output_dir: PathBuf,
    /// Scenario tags; empty means all.
    pub scenarios: Vec<String>,
    pub building: BuildingConfig,
    /// Occupant profile per zone name; zones not listed use the default.
    pub occupancy: BTreeMap<String, OccupancyProfile>,
    pub weather: WeatherParams,
    pub bank: BankConfig,
    pub estimator: EstimatorConfig,
    pub observer: ObserverConfig,
    pub ocp: OcpConfig,
    pub schedule: ComfortSchedule,
    pub simulation: SimulationConfig,
    pub prediction: PredictionConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            span_days: 14,
            history_weeks: 4,
            calendar: Calendar::default(),
            output_dir: PathBuf::from("out"),
            scenarios: Vec::new(),
            building: BuildingConfig::default(),
            occupancy: BTreeMap::new(),
            weather: WeatherParams::default(),
            bank: BankConfig::default(),
            estimator: EstimatorConfig::default(),
            observer: ObserverConfig::default(),
            ocp: OcpConfig::default(),
            schedule: ComfortSchedule::default(),
            simulation: SimulationConfig::default(),
            prediction: PredictionConfig::default(),
            data: DataConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingConfig {
    pub zones: Vec<ZoneParams>,
    pub couplings: Vec<CouplingConfig>,
    pub supply: SupplyConditions,
}

impl Default for BuildingConfig {
    fn default() -> Self {
        let b = Building::default_three_zone();
        Self {
            couplings: b
                .couplings
                .iter()
                .map(|c| CouplingConfig { a: b.zones[c.a].name.clone(), b: b.zones[c.b].name.clone(), r: c.r })
                .collect(),
            zones: b.zones,
            supply: b.supply,
        }
    }
}

/// Heat path between two zones named in `building.zones`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub a: String,
    pub b: String,
    /// K/W.
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    pub template: KernelSpec,
    /// Observation noise variance of the occupancy estimates, persons².
    pub noise_var: f64,
    /// Optimize hyperparameters per weekday instead of using the template.
    pub fit: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self { template: default_template(), noise_var: 0.5, fit: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// RK4 substeps per control interval in the plant.
    pub plant_substeps: usize,
    /// Relative parameter perturbation of the plant against the model.
    pub mismatch: f64,
    pub noise: MeasurementNoise,
    pub water_only_energy: bool,
    /// Initial temperature of every node, °C.
    pub initial_temperature: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            plant_substeps: 15,
            mismatch: 0.0,
            noise: MeasurementNoise::default(),
            water_only_energy: false,
            initial_temperature: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    /// Forecast horizon scored by the RMSE table, hours.
    pub horizon: f64,
    /// Weeks used to fit the bank before scoring starts.
    pub train_weeks: usize,
    /// Synthetic weeks generated when no occupancy CSV is given.
    pub weeks: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self { horizon: 6.0, train_weeks: 4, weeks: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Co2Unit {
    Ppm,
    MassFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub co2: Option<PathBuf>,
    pub occupancy: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub timestamp_column: String,
    /// Columns whose header matches become zones.
    pub zone_pattern: String,
    pub ambient_column: String,
    pub co2_unit: Co2Unit,
    /// Supply air flow assumed when estimating from CO₂, kg/s.
    pub air_flow: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            co2: None,
            occupancy: None,
            weather: None,
            timestamp_column: "timestamp".into(),
            zone_pattern: ".+".into(),
            ambient_column: "ambient".into(),
            co2_unit: Co2Unit::Ppm,
            air_flow: 0.1,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML. Unknown keys are returned; `strict` turns them into an error.
    pub fn from_toml(text: &str, strict: bool) -> Result<(Self, Vec<String>), HarnessError> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| HarnessError::Config(format!("parse error: {e}")))?;
        if strict && !unknown.is_empty() {
            return Err(HarnessError::Config(format!("unknown key `{}`", unknown[0])));
        }
        cfg.validate()?;
        Ok((cfg, unknown))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg_err = |key: &str, e: crate::error::Error| HarnessError::Config(format!("{key}: {e}"));
        self.building().map_err(|e| cfg_err("building", e))?;
        let names: Vec<&str> = self.building.zones.iter().map(|z| z.name.as_str()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(HarnessError::Config(format!("building.zones: duplicate zone name `{n}`")));
            }
        }
        for (name, p) in &self.occupancy {
            if !names.contains(&name.as_str()) {
                return Err(HarnessError::Config(format!("occupancy.{name}: no such zone")));
            }
            p.validate().map_err(|e| cfg_err(&format!("occupancy.{name}"), e))?;
        }
        self.schedule.validate().map_err(|e| cfg_err("schedule", e))?;
        self.ocp.validate().map_err(|e| cfg_err("ocp", e))?;
        self.bank.template.validate().map_err(|e| cfg_err("bank.template", e))?;
        if !(self.bank.noise_var > 0.0) {
            return Err(HarnessError::Config("bank.noise_var: must be > 0".into()));
        }
        if self.span_days < 2 {
            return Err(HarnessError::Config("span_days: must be at least 2".into()));
        }
        if self.history_weeks < 1 {
            return Err(HarnessError::Config("history_weeks: at least one week of history is required".into()));
        }
        if self.calendar.epoch_weekday > 6 {
            return Err(HarnessError::Config("calendar.epoch_weekday: must lie in 0..=6".into()));
        }
        if self.simulation.plant_substeps == 0 {
            return Err(HarnessError::Config("simulation.plant_substeps: must be >= 1".into()));
        }
        if !(self.simulation.mismatch >= 0.0 && self.simulation.mismatch < 1.0) {
            return Err(HarnessError::Config("simulation.mismatch: must lie in [0, 1)".into()));
        }
        if !(self.prediction.horizon > 0.0) {
            return Err(HarnessError::Config("prediction.horizon: must be > 0".into()));
        }
        if self.prediction.train_weeks == 0 || self.prediction.weeks <= self.prediction.train_weeks {
            return Err(HarnessError::Config("prediction.weeks: must exceed prediction.train_weeks >= 1".into()));
        }
        self.scenario_list()?;
        regex::Regex::new(&self.data.zone_pattern)
            .map_err(|e| HarnessError::Config(format!("data.zone_pattern: {e}")))?;
        if !(self.data.air_flow >= 0.0) {
            return Err(HarnessError::Config("data.air_flow: must be >= 0".into()));
        }
        Ok(())
    }

    /// Resolves relative data paths against `base` and checks they exist.
    pub fn resolve_paths(&mut self, base: &Path) -> Result<(), HarnessError> {
        for (key, p) in [("data.co2", &mut self.data.co2), ("data.occupancy", &mut self.data.occupancy), ("data.weather", &mut self.data.weather)] {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
                if !path.is_file() {
                    return Err(HarnessError::Config(format!("{key}: file `{}` does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn building(&self) -> crate::error::Result<Building> {
        let index = |n: &str| {
            self.building.zones.iter().position(|z| z.name == n).ok_or_else(|| crate::error::Error::InvalidParameter {
                name: "couplings",
                reason: format!("no zone named `{n}`"),
            })
        };
        let couplings = self
            .building
            .couplings
            .iter()
            .map(|c| Ok(Coupling { a: index(&c.a)?, b: index(&c.b)?, r: c.r }))
            .collect::<crate::error::Result<Vec<_>>>()?;
        Building::new(self.building.zones.clone(), couplings, self.building.supply)
    }

    pub fn profile(&self, zone: &str) -> OccupancyProfile {
        self.occupancy.get(zone).copied().unwrap_or_default()
    }

    pub fn scenario_list(&self) -> Result<Vec<Scenario>, HarnessError> {
        if self.scenarios.is_empty() {
            return Ok(Scenario::ALL.to_vec());
        }
        self.scenarios
            .iter()
            .map(|s| Scenario::parse(s).ok_or_else(|| HarnessError::Config(format!("scenarios: unknown scenario `{s}`"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::building::{CO2_GENERATION, OCCUPANT_GAIN};

    #[test]
    fn empty_config_applies_defaults() {
        let (cfg, unknown) = ExperimentConfig::from_toml("", true).unwrap();
        assert!(unknown.is_empty());
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.ocp.step, 0.25);
        assert_eq!(cfg.ocp.horizon, 6.0);
        assert_eq!(cfg.ocp.penalty_weight, 0.01);
        assert_eq!(cfg.schedule.threshold, 0.5);
        assert_eq!(cfg.estimator.generation, CO2_GENERATION);
        assert!(cfg.building.zones.iter().all(|z| z.q_occ == OCCUPANT_GAIN));
    }

    #[test]
    fn unknown_keys_warn_or_fail() {
        let text = "seed = 1\n[ocp]\nhorizn = 4.0\n";
        let (_, unknown) = ExperimentConfig::from_toml(text, false).unwrap();
        assert_eq!(unknown, vec!["ocp.horizn".to_string()]);
        let err = ExperimentConfig::from_toml(text, true).unwrap_err();
        assert!(err.to_string().contains("ocp.horizn"));
    }

    #[test]
    fn inverted_band_names_the_mode() {
        let err = ExperimentConfig::from_toml("[schedule.comfort]\nlower = 25.0\nupper = 22.0\n", false).unwrap_err();
        assert!(err.to_string().contains("comfort"), "{err}");
    }

    #[test]
    fn couplings_must_reference_zones() {
        let text = "[[building.zones]]\nname = \"a\"\n[[building.couplings]]\na = \"a\"\nb = \"b\"\nr = 0.01\n";
        let err = ExperimentConfig::from_toml(text, false).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
    }

    #[test]
    fn missing_data_file_fails_at_load() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.co2 = Some(PathBuf::from("definitely/not/here.csv"));
        let err = cfg.resolve_paths(Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("data.co2"));
    }
}
