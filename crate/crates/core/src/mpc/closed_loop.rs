//! Closed-loop simulation of the controller scenarios against the plant.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ocp::{solve_ocp, thermal_vector, OcpConfig, OcpProblem, ThermalModel};
use super::{violation, Band, ComfortSchedule, OccupancySource, Scenario};
use crate::building::{step_energy, Building, ControlInput, DisturbanceTrace, ZoneState, PPM_TO_MASS_FRACTION, SECONDS_PER_HOUR};
use crate::calendar::Calendar;
use crate::error::{invalid, Error, Result};
use crate::lfm::{ObserverConfig, ZoneInputs, ZoneMeasurement, ZoneObserver};
use crate::occupancy::{LatentStates, WeekdayBank};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementNoise {
    /// K.
    pub temperature_sd: f64,
    pub co2_sd_ppm: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self { temperature_sd: 0.05, co2_sd_ppm: 2.0 }
    }
}

/// Everything a closed-loop run needs. The disturbance trace starts with
/// `start_index` steps of history that precede the controlled span.
#[derive(Debug, Clone)]
pub struct ClosedLoopSetup {
    /// Model used by the controller and observer.
    pub model: Building,
    /// Simulation truth.
    pub plant: Building,
    pub trace: DisturbanceTrace,
    pub start_index: usize,
    pub steps: usize,
    pub x0: Vec<ZoneState>,
    pub ocp: OcpConfig,
    pub schedule: ComfortSchedule,
    pub calendar: Calendar,
    pub plant_substeps: usize,
    /// One bank per zone; required by the LFM scenarios.
    pub banks: Vec<WeekdayBank>,
    pub observer: ObserverConfig,
    pub noise: MeasurementNoise,
    pub seed: u64,
    pub water_only_energy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    pub scenario: Scenario,
    /// `steps + 1` grid times.
    pub times: Vec<f64>,
    /// Plant state at every grid time.
    pub states: Vec<Vec<ZoneState>>,
    pub controls: Vec<Vec<ControlInput>>,
    pub occupancy: Vec<Vec<f64>>,
    /// Occupancy the controller assumed for the first interval.
    pub assumed_occupancy: Vec<Vec<f64>>,
    /// Band the metrics were scored against on each interval.
    pub bands: Vec<Vec<Band>>,
    /// Kelvin-hours per zone.
    pub discomfort: Vec<f64>,
    /// kWh per zone.
    pub energy: Vec<f64>,
    pub solver_iterations: usize,
}

impl ClosedLoopSetup {
    pub fn validate(&self, scenario: Scenario) -> Result<()> {
        self.model.validate()?;
        self.plant.validate()?;
        self.ocp.validate()?;
        self.schedule.validate()?;
        self.trace.validate()?;
        let n = self.model.n_zones();
        if self.plant.n_zones() != n || self.x0.len() != n || self.trace.occupancy.len() != n {
            return Err(invalid("zones", "model, plant, initial state and trace disagree on the zone count"));
        }
        if (self.trace.step - self.ocp.step).abs() > 1e-9 {
            return Err(invalid("step", "trace and controller steps differ"));
        }
        if self.start_index + self.steps > self.trace.len() {
            return Err(invalid("span", "disturbance trace does not cover the simulated span"));
        }
        if scenario.occupancy_source() == OccupancySource::Lfm && self.banks.len() != n {
            return Err(invalid("banks", "LFM scenarios need one weekday bank per zone"));
        }
        Ok(())
    }

    fn ambient(&self, k: usize) -> f64 {
        self.trace.ambient.get(k).copied().unwrap_or_else(|| *self.trace.ambient.last().unwrap_or(&0.0))
    }

    fn occupancy(&self, zone: usize, k: usize) -> f64 {
        self.trace.occupancy[zone].get(k).copied().unwrap_or(0.0)
    }

    /// Latent beliefs filtered over the history that precedes the span.
    pub fn warm_latents(&self, zone: usize) -> Result<LatentStates> {
        let bank = &self.banks[zone];
        let mut l = LatentStates::default();
        for k in 0..self.start_index {
            l.assimilate(bank, self.trace.time(k), Some(self.trace.occupancy[zone][k]))?;
        }
        Ok(l)
    }
}

pub fn run_closed_loop(setup: &ClosedLoopSetup, scenario: Scenario) -> Result<ClosedLoopResult> {
    setup.validate(scenario)?;
    let n_zones = setup.model.n_zones();
    let n = setup.ocp.steps();
    let dt = setup.ocp.step;
    let thermal = ThermalModel::from_building(&setup.model);
    let mut noise_rng = rng::stream(setup.seed, rng::MEASUREMENT_NOISE, 0);
    let t0 = setup.trace.time(setup.start_index);

    let mut observers = if scenario.occupancy_source() == OccupancySource::Lfm {
        (0..n_zones)
            .map(|z| {
                ZoneObserver::new(
                    &setup.model.zones[z],
                    &setup.model.supply,
                    setup.banks[z].clone(),
                    setup.warm_latents(z)?,
                    setup.observer,
                    t0,
                    &setup.x0[z],
                )
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n_zones)
        .map(|z| {
            setup
                .model
                .couplings
                .iter()
                .filter_map(|c| {
                    if c.a == z {
                        Some((c.b, c.r))
                    } else if c.b == z {
                        Some((c.a, c.r))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();

    let mut res = ClosedLoopResult {
        scenario,
        times: vec![t0],
        states: vec![setup.x0.clone()],
        controls: Vec::with_capacity(setup.steps),
        occupancy: Vec::with_capacity(setup.steps),
        assumed_occupancy: Vec::with_capacity(setup.steps),
        bands: Vec::with_capacity(setup.steps),
        discomfort: vec![0.0; n_zones],
        energy: vec![0.0; n_zones],
        solver_iterations: 0,
    };
    let mut warm: Option<Vec<f64>> = None;
    let mut last_measured: Vec<ZoneMeasurement> = Vec::new();

    for step in 0..setup.steps {
        let k = setup.start_index + step;
        let t = setup.trace.time(k);
        let x = res.states.last().expect("trajectory is never empty").clone();

        // Observe.
        let measured: Vec<ZoneMeasurement> = x
            .iter()
            .map(|s| {
                let et: f64 = noise_rng.sample(StandardNormal);
                let ec: f64 = noise_rng.sample(StandardNormal);
                ZoneMeasurement {
                    tz: s.tz + setup.noise.temperature_sd * et,
                    co2: s.x + setup.noise.co2_sd_ppm * PPM_TO_MASS_FRACTION * ec,
                }
            })
            .collect();
        if step > 0 {
            let u_prev = res.controls.last().expect("one control per completed step");
            for (z, obs) in observers.iter_mut().enumerate() {
                let inputs = ZoneInputs {
                    control: u_prev[z],
                    ambient: setup.ambient(k - 1),
                    neighbors: neighbors[z].iter().map(|(j, r)| (last_measured[*j].tz, *r)).collect(),
                };
                obs.step(t, &inputs, Some(measured[z])).map_err(|e| at_step(e, step))?;
            }
        }
        last_measured = measured;

        // Predict the disturbance on t + jΔt, j = 0..=N.
        let forecast: Vec<Vec<f64>> = match scenario.occupancy_source() {
            OccupancySource::None => vec![vec![0.0; n + 1]; n_zones],
            OccupancySource::GroundTruth => {
                (0..n_zones).map(|z| (0..=n).map(|j| setup.occupancy(z, k + j)).collect()).collect()
            }
            OccupancySource::Lfm => observers.iter().map(|o| o.disturbance_trajectory(n + 1)).collect(),
        };

        // Schedule and solve.
        let policy = scenario.mode_policy();
        let problem = OcpProblem {
            x0: thermal_vector(&x),
            ambient: (0..n).map(|j| setup.ambient(k + j)).collect(),
            occupancy: (0..n).map(|j| (0..n_zones).map(|z| forecast[z][j]).collect()).collect(),
            bands: (0..n)
                .map(|j| {
                    let tj = t + (j + 1) as f64 * dt;
                    (0..n_zones)
                        .map(|z| setup.schedule.band(setup.schedule.mode(&setup.calendar, tj, forecast[z][j + 1], policy)))
                        .collect()
                })
                .collect(),
        };
        let sol = solve_ocp(&thermal, &problem, &setup.ocp, warm.as_deref()).map_err(|e| at_step(e, step))?;
        res.solver_iterations += sol.iterations;
        let u = sol.controls[0].clone();
        warm = Some(sol.shifted());

        // Apply to the plant and score the interval.
        let occ: Vec<f64> = (0..n_zones).map(|z| setup.occupancy(z, k)).collect();
        let bands: Vec<Band> =
            occ.iter().map(|o| setup.schedule.band(setup.schedule.mode(&setup.calendar, t, *o, policy))).collect();
        let ambient = setup.ambient(k);
        let subs = setup.plant_substeps.max(1);
        let h = dt * SECONDS_PER_HOUR / subs as f64;
        let mut xs = x.clone();
        for _ in 0..subs {
            let next = setup.plant.rk4_step(&xs, &u, ambient, &occ, h);
            for z in 0..n_zones {
                res.discomfort[z] += 0.5 * (dt / subs as f64) * (violation(xs[z].tz, &bands[z]) + violation(next[z].tz, &bands[z]));
            }
            xs = next;
        }
        if xs.iter().any(|s| !s.is_finite()) {
            return Err(Error::Divergence { step });
        }
        for (e, v) in res.energy.iter_mut().zip(step_energy(&setup.plant, &x, &u, dt, setup.water_only_energy)) {
            *e += v;
        }
        res.assumed_occupancy.push((0..n_zones).map(|z| forecast[z][0]).collect());
        res.controls.push(u);
        res.occupancy.push(occ);
        res.bands.push(bands);
        res.states.push(xs);
        res.times.push(t + dt);
    }
    Ok(res)
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
        other => other,
    }
}

/// One row of the scenario comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub scenario: Scenario,
    /// Zone name, or `total`.
    pub zone: String,
    pub discomfort_kh: f64,
    pub energy_kwh: f64,
    /// Energy saved relative to the `None` scenario, percent.
    pub energy_reduction_pct: f64,
}

/// Runs the scenarios concurrently on identical traces and tabulates per-zone
/// and total metrics. The `None` scenario is always included as reference.
pub fn benchmark_scenarios(setup: &ClosedLoopSetup, scenarios: &[Scenario]) -> Result<(Vec<ClosedLoopResult>, Vec<BenchmarkRow>)> {
    let mut list: Vec<Scenario> = scenarios.to_vec();
    if !list.contains(&Scenario::None) {
        list.insert(0, Scenario::None);
    }
    list.sort();
    list.dedup();
    let results: Vec<ClosedLoopResult> = list.par_iter().map(|s| run_closed_loop(setup, *s)).collect::<Result<_>>()?;
    let reference = results.iter().find(|r| r.scenario == Scenario::None).expect("None is always run");
    let names: Vec<String> = setup.model.zones.iter().map(|z| z.name.clone()).collect();
    let reduction = |e: f64, base: f64| if base > 0.0 { 100.0 * (base - e) / base } else { 0.0 };
    let mut rows = Vec::new();
    for r in &results {
        for (z, name) in names.iter().enumerate() {
            rows.push(BenchmarkRow {
                scenario: r.scenario,
                zone: name.clone(),
                discomfort_kh: r.discomfort[z],
                energy_kwh: r.energy[z],
                energy_reduction_pct: reduction(r.energy[z], reference.energy[z]),
            });
        }
        let total: f64 = r.energy.iter().sum();
        rows.push(BenchmarkRow {
            scenario: r.scenario,
            zone: "total".into(),
            discomfort_kh: r.discomfort.iter().sum(),
            energy_kwh: total,
            energy_reduction_pct: reduction(total, reference.energy.iter().sum()),
        });
    }
    Ok((results, rows))
}
