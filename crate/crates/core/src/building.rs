//! Multi-zone RC thermal and CO₂ simulator.
//!
//! Each zone carries four states: zone air `T_z`, external wall `T_w`,
//! radiator `T_r` (all °C) and CO₂ mass fraction `X`. Physics runs in SI
//! seconds; the public time axis is hours.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, DayKind, HOURS_PER_DAY};
use crate::error::{invalid, Error, Result};
use crate::rng;

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const CP_AIR: f64 = 1005.0;
pub const CP_WATER: f64 = 4186.0;
/// Occupant sensible gain plus office equipment, W per person.
pub const OCCUPANT_GAIN: f64 = 195.0;
/// CO₂ generation per person, kg/s.
pub const CO2_GENERATION: f64 = 6.2e-6;
/// Mass fraction of 1 ppm CO₂ in air.
pub const PPM_TO_MASS_FRACTION: f64 = 1.519e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoneParams {
    pub name: String,
    /// Heat capacities, J/K.
    pub cap_zone: f64,
    pub cap_wall: f64,
    pub cap_radiator: f64,
    /// Heat resistances, K/W.
    pub r_zone_wall: f64,
    pub r_zone_radiator: f64,
    pub r_wall_ambient: f64,
    pub cp_air: f64,
    pub cp_water: f64,
    /// W per occupant.
    pub q_occ: f64,
    /// Zone air mass, kg.
    pub air_mass: f64,
}

impl Default for ZoneParams {
    fn default() -> Self {
        Self {
            name: "zone".into(),
            cap_zone: 3.0e6,
            cap_wall: 2.0e7,
            cap_radiator: 4.0e5,
            r_zone_wall: 0.005,
            r_zone_radiator: 0.01,
            r_wall_ambient: 0.01,
            cp_air: CP_AIR,
            cp_water: CP_WATER,
            q_occ: OCCUPANT_GAIN,
            air_mass: 360.0,
        }
    }
}

impl ZoneParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cap_zone", self.cap_zone),
            ("cap_wall", self.cap_wall),
            ("cap_radiator", self.cap_radiator),
            ("r_zone_wall", self.r_zone_wall),
            ("r_zone_radiator", self.r_zone_radiator),
            ("r_wall_ambient", self.r_wall_ambient),
            ("cp_air", self.cp_air),
            ("cp_water", self.cp_water),
            ("air_mass", self.air_mass),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("zone '{}': must be finite and > 0, got {v}", self.name)));
            }
        }
        if !(self.q_occ >= 0.0) {
            return Err(invalid("q_occ", format!("zone '{}': must be >= 0", self.name)));
        }
        Ok(())
    }
}

/// Undirected heat path between zones `a` and `b` with resistance `r` (K/W).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub a: usize,
    pub b: usize,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupplyConditions {
    /// Supply air temperature `T_S`, °C.
    pub air_temp: f64,
    /// Supply water temperature `T_V`, °C.
    pub water_temp: f64,
    /// Supply air CO₂ mass fraction.
    pub co2: f64,
    /// kg/s per person.
    pub co2_generation: f64,
}

impl Default for SupplyConditions {
    fn default() -> Self {
        Self { air_temp: 18.0, water_temp: 50.0, co2: 400.0 * PPM_TO_MASS_FRACTION, co2_generation: CO2_GENERATION }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZoneState {
    pub tz: f64,
    pub tw: f64,
    pub tr: f64,
    pub x: f64,
}

impl ZoneState {
    pub fn uniform(temp: f64, x: f64) -> Self {
        Self { tz: temp, tw: temp, tr: temp, x }
    }

    pub fn is_finite(&self) -> bool {
        self.tz.is_finite() && self.tw.is_finite() && self.tr.is_finite() && self.x.is_finite()
    }

    fn axpy(&self, h: f64, d: &ZoneState) -> ZoneState {
        ZoneState { tz: self.tz + h * d.tz, tw: self.tw + h * d.tw, tr: self.tr + h * d.tr, x: self.x + h * d.x }
    }
}

/// Mass flows in kg/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub air: f64,
    pub water: f64,
}

/// Time derivative (per second) of one zone's thermal states. `coupling_heat`
/// is the net inflow from neighbouring zones in W.
pub fn zone_derivative(
    s: &ZoneState,
    u: &ControlInput,
    ambient: f64,
    occupants: f64,
    coupling_heat: f64,
    p: &ZoneParams,
    supply: &SupplyConditions,
) -> ZoneState {
    let q_zw = (s.tw - s.tz) / p.r_zone_wall;
    let q_zr = (s.tr - s.tz) / p.r_zone_radiator;
    let q_wa = (ambient - s.tw) / p.r_wall_ambient;
    ZoneState {
        tz: (q_zw + q_zr + p.cp_air * u.air * (supply.air_temp - s.tz) + p.q_occ * occupants + coupling_heat)
            / p.cap_zone,
        tw: (-q_zw + q_wa) / p.cap_wall,
        tr: (-q_zr + p.cp_water * u.water * (supply.water_temp - s.tr)) / p.cap_radiator,
        x: co2_derivative(s.x, u.air, occupants, p.air_mass, supply.co2, supply.co2_generation),
    }
}

/// CO₂ mass balance, per second.
pub fn co2_derivative(x: f64, air_flow: f64, occupants: f64, air_mass: f64, supply_co2: f64, generation: f64) -> f64 {
    (air_flow * (supply_co2 - x) + generation * occupants) / air_mass
}

/// Heat flowing into zone `a` through coupling `c`, W. The flow into `b` is its negation.
pub fn coupling_flow(c: &Coupling, states: &[ZoneState]) -> f64 {
    (states[c.b].tz - states[c.a].tz) / c.r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub zones: Vec<ZoneParams>,
    pub couplings: Vec<Coupling>,
    pub supply: SupplyConditions,
}

impl Building {
    pub fn new(zones: Vec<ZoneParams>, couplings: Vec<Coupling>, supply: SupplyConditions) -> Result<Self> {
        let b = Self { zones, couplings, supply };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(invalid("zones", "at least one zone is required"));
        }
        for z in &self.zones {
            z.validate()?;
        }
        for c in &self.couplings {
            if c.a >= self.zones.len() || c.b >= self.zones.len() || c.a == c.b {
                return Err(invalid("couplings", format!("invalid zone pair ({}, {})", c.a, c.b)));
            }
            if !(c.r > 0.0 && c.r.is_finite()) {
                return Err(invalid("couplings", format!("resistance must be > 0, got {}", c.r)));
            }
        }
        if !(self.supply.co2 >= 0.0 && self.supply.co2_generation > 0.0) {
            return Err(invalid("supply", "co2 must be >= 0 and co2_generation > 0"));
        }
        Ok(())
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    /// Net coupling heat into every zone, W.
    pub fn coupling_heat(&self, states: &[ZoneState]) -> Vec<f64> {
        let mut heat = vec![0.0; self.zones.len()];
        for c in &self.couplings {
            let q = coupling_flow(c, states);
            heat[c.a] += q;
            heat[c.b] -= q;
        }
        heat
    }

    pub fn derivative(&self, states: &[ZoneState], u: &[ControlInput], ambient: f64, occupancy: &[f64]) -> Vec<ZoneState> {
        let heat = self.coupling_heat(states);
        (0..self.zones.len())
            .map(|i| zone_derivative(&states[i], &u[i], ambient, occupancy[i], heat[i], &self.zones[i], &self.supply))
            .collect()
    }

    /// One classical RK4 step of `h` seconds with inputs held constant.
    pub fn rk4_step(&self, states: &[ZoneState], u: &[ControlInput], ambient: f64, occupancy: &[f64], h: f64) -> Vec<ZoneState> {
        let shift = |s: &[ZoneState], k: &[ZoneState], a: f64| -> Vec<ZoneState> {
            s.iter().zip(k).map(|(x, d)| x.axpy(a, d)).collect()
        };
        let k1 = self.derivative(states, u, ambient, occupancy);
        let k2 = self.derivative(&shift(states, &k1, 0.5 * h), u, ambient, occupancy);
        let k3 = self.derivative(&shift(states, &k2, 0.5 * h), u, ambient, occupancy);
        let k4 = self.derivative(&shift(states, &k3, h), u, ambient, occupancy);
        states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let d = ZoneState {
                    tz: k1[i].tz + 2.0 * k2[i].tz + 2.0 * k3[i].tz + k4[i].tz,
                    tw: k1[i].tw + 2.0 * k2[i].tw + 2.0 * k3[i].tw + k4[i].tw,
                    tr: k1[i].tr + 2.0 * k2[i].tr + 2.0 * k3[i].tr + k4[i].tr,
                    x: k1[i].x + 2.0 * k2[i].x + 2.0 * k3[i].x + k4[i].x,
                };
                s.axpy(h / 6.0, &d)
            })
            .collect()
    }

    /// Advances by one grid interval of `dt_hours`, split into `substeps` RK4 steps.
    pub fn advance(
        &self,
        states: &[ZoneState],
        u: &[ControlInput],
        ambient: f64,
        occupancy: &[f64],
        dt_hours: f64,
        substeps: usize,
    ) -> Vec<ZoneState> {
        let h = dt_hours * SECONDS_PER_HOUR / substeps.max(1) as f64;
        let mut x = states.to_vec();
        for _ in 0..substeps.max(1) {
            x = self.rk4_step(&x, u, ambient, occupancy, h);
        }
        x
    }

    /// Copy with every capacity and resistance scaled by an independent factor
    /// drawn uniformly from `[1 - fraction, 1 + fraction]`.
    pub fn perturbed(&self, fraction: f64, seed: u64) -> Building {
        if fraction == 0.0 {
            return self.clone();
        }
        let mut r = rng::stream(seed, rng::PLANT_MISMATCH, 0);
        let mut f = || 1.0 + fraction * r.gen_range(-1.0..=1.0);
        let mut b = self.clone();
        for z in &mut b.zones {
            z.cap_zone *= f();
            z.cap_wall *= f();
            z.cap_radiator *= f();
            z.r_zone_wall *= f();
            z.r_zone_radiator *= f();
            z.r_wall_ambient *= f();
        }
        for c in &mut b.couplings {
            c.r *= f();
        }
        b
    }

    /// Algebraic steady state of the thermal nodes under constant inputs.
    pub fn thermal_steady_state(&self, u: &[ControlInput], ambient: f64, occupancy: &[f64]) -> Result<Vec<[f64; 3]>> {
        let n = self.zones.len();
        let mut m = nalgebra::DMatrix::<f64>::zeros(3 * n, 3 * n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(3 * n);
        for (i, p) in self.zones.iter().enumerate() {
            let (z, w, r) = (3 * i, 3 * i + 1, 3 * i + 2);
            let (gzw, gzr, gwa) = (1.0 / p.r_zone_wall, 1.0 / p.r_zone_radiator, 1.0 / p.r_wall_ambient);
            let ga = p.cp_air * u[i].air;
            let gw = p.cp_water * u[i].water;
            m[(z, z)] = -(gzw + gzr + ga);
            m[(z, w)] = gzw;
            m[(z, r)] = gzr;
            rhs[z] = -(ga * self.supply.air_temp + p.q_occ * occupancy[i]);
            m[(w, z)] = gzw;
            m[(w, w)] = -(gzw + gwa);
            rhs[w] = -gwa * ambient;
            m[(r, z)] = gzr;
            m[(r, r)] = -(gzr + gw);
            rhs[r] = -gw * self.supply.water_temp;
        }
        for c in &self.couplings {
            let g = 1.0 / c.r;
            let (a, b) = (3 * c.a, 3 * c.b);
            m[(a, a)] -= g;
            m[(a, b)] += g;
            m[(b, b)] -= g;
            m[(b, a)] += g;
        }
        let sol = m.lu().solve(&rhs).ok_or_else(|| Error::Numeric("singular steady-state system".into()))?;
        Ok((0..n).map(|i| [sol[3 * i], sol[3 * i + 1], sol[3 * i + 2]]).collect())
    }

    /// Three office-scale zones: north office, south office and the hallway
    /// between them. Parameters are plausible defaults, not identified values.
    pub fn default_three_zone() -> Building {
        let office = |name: &str| ZoneParams { name: name.into(), ..ZoneParams::default() };
        let hallway = ZoneParams {
            name: "hallway".into(),
            cap_zone: 2.0e6,
            cap_wall: 1.2e7,
            r_zone_wall: 0.008,
            r_wall_ambient: 0.016,
            air_mass: 240.0,
            ..ZoneParams::default()
        };
        Building {
            zones: vec![office("north_office"), office("south_office"), hallway],
            couplings: vec![Coupling { a: 0, b: 2, r: 0.01 }, Coupling { a: 1, b: 2, r: 0.01 }],
            supply: SupplyConditions::default(),
        }
    }
}

/// Ambient temperature and per-zone occupancy on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceTrace {
    pub start: f64,
    pub step: f64,
    pub ambient: Vec<f64>,
    /// `occupancy[zone][k]`, persons.
    pub occupancy: Vec<Vec<f64>>,
}

impl DisturbanceTrace {
    pub fn len(&self) -> usize {
        self.ambient.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ambient.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn occupancy_at(&self, k: usize) -> Vec<f64> {
        self.occupancy.iter().map(|z| z[k]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(invalid("step", "must be > 0"));
        }
        if self.occupancy.iter().any(|z| z.len() != self.ambient.len()) {
            return Err(invalid("occupancy", "every zone trace must match the ambient length"));
        }
        Ok(())
    }
}

/// Per-zone trajectory of simulated states: `states[k]` holds all zones at grid step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: f64,
    pub step: f64,
    pub states: Vec<Vec<ZoneState>>,
}

/// Open-loop simulation with piecewise-constant controls; `controls[k]` is held
/// over `[t_k, t_{k+1})`.
pub fn simulate(
    building: &Building,
    x0: &[ZoneState],
    controls: &[Vec<ControlInput>],
    dist: &DisturbanceTrace,
    substeps: usize,
) -> Result<Trajectory> {
    building.validate()?;
    dist.validate()?;
    if x0.len() != building.n_zones() || dist.occupancy.len() != building.n_zones() {
        return Err(invalid("x0", "zone count mismatch"));
    }
    if controls.len() > dist.len() {
        return Err(invalid("controls", "disturbance trace does not cover the span"));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.to_vec());
    for (k, u) in controls.iter().enumerate() {
        let next = building.advance(&states[k], u, dist.ambient[k], &dist.occupancy_at(k), dist.step, substeps);
        if next.iter().any(|s| !s.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        states.push(next);
    }
    Ok(Trajectory { start: dist.start, step: dist.step, states })
}

/// Thermal energy delivered per zone over a grid step of `dt_hours`, kWh.
pub fn step_energy(
    building: &Building,
    states: &[ZoneState],
    u: &[ControlInput],
    dt_hours: f64,
    water_only: bool,
) -> Vec<f64> {
    let s = &building.supply;
    building
        .zones
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let water = p.cp_water * u[i].water * (s.water_temp - states[i].tr).abs();
            let air = if water_only { 0.0 } else { p.cp_air * u[i].air * (s.air_temp - states[i].tz).abs() };
            (air + water) * dt_hours / 1000.0
        })
        .collect()
}

/// Total delivered energy per zone in kWh, evaluated with left-point states.
pub fn energy_consumed(
    building: &Building,
    traj: &Trajectory,
    controls: &[Vec<ControlInput>],
    water_only: bool,
) -> Vec<f64> {
    let mut total = vec![0.0; building.n_zones()];
    for (k, u) in controls.iter().enumerate() {
        for (t, e) in total.iter_mut().zip(step_energy(building, &traj.states[k], u, traj.step, water_only)) {
            *t += e;
        }
    }
    total
}

/// Occupant behaviour of one zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyProfile {
    /// Hours after midnight.
    pub arrival_mean: f64,
    pub arrival_sd: f64,
    /// Hours.
    pub duration_mean: f64,
    pub duration_sd: f64,
    /// Probability that a given person shows up on a weekday.
    pub presence: f64,
    pub max_occupants: u32,
}

impl Default for OccupancyProfile {
    fn default() -> Self {
        Self { arrival_mean: 8.0, arrival_sd: 1.0, duration_mean: 8.5, duration_sd: 1.0, presence: 0.8, max_occupants: 6 }
    }
}

impl OccupancyProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.presence) {
            return Err(invalid("presence", "must lie in [0, 1]"));
        }
        if !(self.arrival_sd >= 0.0 && self.duration_sd >= 0.0) {
            return Err(invalid("arrival_sd", "standard deviations must be >= 0"));
        }
        Ok(())
    }
}

fn truncated_sample<R: Rng>(r: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd == 0.0 {
        return mean.clamp(lo, hi);
    }
    let n = Normal::new(mean, sd).expect("sd is finite and positive");
    for _ in 0..10 {
        let v = n.sample(r);
        if v >= lo && v < hi {
            return v;
        }
    }
    n.sample(r).clamp(lo, hi)
}

/// Integer occupant counts on a grid of `step` hours starting at `start`,
/// covering `n_days` days. Counts are sampled at each step's start time;
/// stays end at midnight; weekends are empty.
pub fn generate_occupancy(
    seed: u64,
    zone_index: u64,
    start: f64,
    n_days: usize,
    step: f64,
    calendar: &Calendar,
    profile: &OccupancyProfile,
) -> Result<Vec<f64>> {
    profile.validate()?;
    let mut r = rng::stream(seed, rng::OCCUPANCY_GEN, zone_index);
    let per_day = (HOURS_PER_DAY / step).round() as usize;
    let mut out = vec![0.0; n_days * per_day];
    let first_day = calendar.day_index(start);
    for d in 0..n_days {
        // Draw for every day so that weekday traces don't shift with the calendar.
        let stays: Vec<(f64, f64)> = (0..profile.max_occupants)
            .filter_map(|_| {
                let present = r.gen_bool(profile.presence);
                let arrival = truncated_sample(&mut r, profile.arrival_mean, profile.arrival_sd, 0.0, HOURS_PER_DAY);
                let duration = truncated_sample(&mut r, profile.duration_mean, profile.duration_sd, 0.0, f64::INFINITY);
                present.then_some((arrival, (arrival + duration).min(HOURS_PER_DAY)))
            })
            .collect();
        let day_start = (first_day + d as i64) as f64 * HOURS_PER_DAY;
        if calendar.day_kind(day_start) == DayKind::Weekend {
            continue;
        }
        for s in 0..per_day {
            let t = day_start + s as f64 * step;
            if t + 1e-9 < start {
                continue;
            }
            let k = ((t - start) / step).round() as usize;
            if k >= out.len() {
                break;
            }
            let h = s as f64 * step;
            out[k] = stays.iter().filter(|(a, e)| h >= *a && h < *e).count() as f64;
        }
    }
    Ok(out)
}

/// Ambient temperature model: annual and daily sinusoids plus AR(1) noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherParams {
    pub mean: f64,
    pub annual_amplitude: f64,
    /// Day of year of the annual maximum.
    pub annual_peak_day: f64,
    /// Day of year at epoch time zero.
    pub start_day_of_year: f64,
    pub daily_amplitude: f64,
    /// Hour of the daily maximum.
    pub daily_peak_hour: f64,
    pub noise_sd: f64,
    /// AR(1) coefficient per grid step.
    pub noise_correlation: f64,
}

impl Default for WeatherParams {
    fn default() -> Self {
        Self {
            mean: 9.0,
            annual_amplitude: 9.0,
            annual_peak_day: 200.0,
            start_day_of_year: 15.0,
            daily_amplitude: 4.0,
            daily_peak_hour: 15.0,
            noise_sd: 1.0,
            noise_correlation: 0.98,
        }
    }
}

pub fn synthetic_weather(seed: u64, start: f64, len: usize, step: f64, p: &WeatherParams) -> Vec<f64> {
    use std::f64::consts::TAU;
    let mut r = rng::stream(seed, rng::WEATHER_NOISE, 0);
    let innovation = Normal::new(0.0, 1.0).expect("unit normal");
    let rho = p.noise_correlation.clamp(0.0, 0.999_999);
    let scale = p.noise_sd * (1.0 - rho * rho).sqrt();
    let mut noise = p.noise_sd * innovation.sample(&mut r);
    (0..len)
        .map(|k| {
            let t = start + k as f64 * step;
            let day = p.start_day_of_year + t / HOURS_PER_DAY;
            let hour = t.rem_euclid(HOURS_PER_DAY);
            let v = p.mean
                + p.annual_amplitude * (TAU * (day - p.annual_peak_day) / 365.0).cos()
                + p.daily_amplitude * (TAU * (hour - p.daily_peak_hour) / HOURS_PER_DAY).cos()
                + noise;
            noise = rho * noise + scale * innovation.sample(&mut r);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single(p: ZoneParams) -> Building {
        Building { zones: vec![p], couplings: vec![], supply: SupplyConditions::default() }
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let p = ZoneParams::default();
        let s = ZoneState::uniform(20.0, SupplyConditions::default().co2);
        let d = zone_derivative(&s, &ControlInput::default(), 20.0, 0.0, 0.0, &p, &SupplyConditions::default());
        assert_eq!(d, ZoneState::default());
    }

    #[test]
    fn one_occupant_adds_gain_to_zone_only() {
        let p = ZoneParams::default();
        let sup = SupplyConditions::default();
        let s = ZoneState { tz: 21.0, tw: 15.0, tr: 30.0, x: 8e-4 };
        let u = ControlInput { air: 0.1, water: 0.02 };
        let d0 = zone_derivative(&s, &u, 5.0, 0.0, 0.0, &p, &sup);
        let d1 = zone_derivative(&s, &u, 5.0, 1.0, 0.0, &p, &sup);
        assert_relative_eq!(d1.tz - d0.tz, 195.0 / p.cap_zone, max_relative = 1e-12);
        assert_eq!(d1.tw, d0.tw);
        assert_eq!(d1.tr, d0.tr);
    }

    #[test]
    fn co2_examples() {
        let g = CO2_GENERATION;
        assert_eq!(co2_derivative(4e-4, 0.2, 0.0, 300.0, 4e-4, g), 0.0);
        let xs = 4e-4 + g * 3.0 / 0.2;
        assert!(co2_derivative(xs, 0.2, 3.0, 300.0, 4e-4, g).abs() < 1e-20);
        assert_relative_eq!(co2_derivative(5e-4, 0.0, 2.0, 300.0, 4e-4, g), 2.0 * g / 300.0);
    }

    #[test]
    fn water_step_matches_first_order_response() {
        // Decouple the radiator so it is an exact first-order system.
        let p = ZoneParams { r_zone_radiator: 1e12, ..ZoneParams::default() };
        let b = single(p.clone());
        let x0 = [ZoneState::uniform(20.0, 0.0)];
        let u = ControlInput { air: 0.0, water: 0.05 };
        let x = b.advance(&x0, &[u], 20.0, &[0.0], 0.25, 15);
        let tau = p.cap_radiator / (p.cp_water * u.water);
        let exact = 50.0 + (20.0 - 50.0) * (-900.0 / tau).exp();
        assert!(((x[0].tr - 20.0) / (exact - 20.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn steady_state_matches_linear_solve() {
        let b = Building::default_three_zone();
        let u = vec![ControlInput { air: 0.05, water: 0.02 }; 3];
        let occ = [2.0, 0.0, 1.0];
        let ss = b.thermal_steady_state(&u, 3.0, &occ).unwrap();
        let x: Vec<ZoneState> = ss.iter().map(|t| ZoneState { tz: t[0], tw: t[1], tr: t[2], x: 0.0 }).collect();
        let d = b.derivative(&x, &u, 3.0, &occ);
        for z in d {
            assert!(z.tz.abs() < 1e-12 && z.tw.abs() < 1e-12 && z.tr.abs() < 1e-12);
        }
    }

    #[test]
    fn energy_hand_arithmetic() {
        let b = single(ZoneParams::default());
        let s = [ZoneState { tz: 20.0, tw: 20.0, tr: 40.0, x: 0.0 }];
        let e = step_energy(&b, &s, &[ControlInput { air: 0.0, water: 0.1 }], 1.0, false);
        assert_relative_eq!(e[0], 4.186, max_relative = 1e-12);
        assert_eq!(step_energy(&b, &s, &[ControlInput::default()], 1.0, false)[0], 0.0);
    }

    #[test]
    fn degenerate_occupancy_profile() {
        let p = OccupancyProfile {
            arrival_mean: 8.0,
            arrival_sd: 0.0,
            duration_mean: 8.0,
            duration_sd: 0.0,
            presence: 1.0,
            max_occupants: 5,
        };
        let cal = Calendar::default();
        let occ = generate_occupancy(3, 0, 0.0, 7, 0.25, &cal, &p).unwrap();
        for (k, v) in occ.iter().enumerate() {
            let t = k as f64 * 0.25;
            let h = t % 24.0;
            let weekday = t < 5.0 * 24.0;
            let expect = if weekday && (8.0..16.0).contains(&h) { 5.0 } else { 0.0 };
            assert_eq!(*v, expect, "t = {t}");
        }
        let none = OccupancyProfile { presence: 0.0, ..p };
        assert!(generate_occupancy(3, 0, 0.0, 7, 0.25, &cal, &none).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn occupancy_is_deterministic() {
        let cal = Calendar::default();
        let p = OccupancyProfile::default();
        let a = generate_occupancy(11, 2, 0.0, 14, 0.25, &cal, &p).unwrap();
        let b = generate_occupancy(11, 2, 0.0, 14, 0.25, &cal, &p).unwrap();
        let c = generate_occupancy(12, 2, 0.0, 14, 0.25, &cal, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn perturbation_is_seeded() {
        let b = Building::default_three_zone();
        assert_eq!(b.perturbed(0.0, 1), b);
        assert_eq!(b.perturbed(0.1, 1), b.perturbed(0.1, 1));
        assert_ne!(b.perturbed(0.1, 1), b);
    }

    proptest! {
        #[test]
        fn occupancy_counts_are_bounded_integers(seed in 0u64..1000, presence in 0.0f64..1.0,
                                                 asd in 0.0f64..6.0, dsd in 0.0f64..10.0, max in 0u32..12) {
            let p = OccupancyProfile { arrival_mean: 8.0, arrival_sd: asd, duration_mean: 8.0, duration_sd: dsd, presence, max_occupants: max };
            let occ = generate_occupancy(seed, 0, 0.0, 7, 0.25, &Calendar::default(), &p).unwrap();
            prop_assert!(occ.iter().all(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= max as f64));
        }

        #[test]
        fn coupling_is_antisymmetric(t in proptest::collection::vec(-10.0f64..40.0, 3)) {
            let b = Building::default_three_zone();
            let s: Vec<ZoneState> = t.iter().map(|v| ZoneState::uniform(*v, 0.0)).collect();
            for c in &b.couplings {
                let rev = Coupling { a: c.b, b: c.a, r: c.r };
                prop_assert_eq!(coupling_flow(c, &s), -coupling_flow(&rev, &s));
            }
            prop_assert!(b.coupling_heat(&s).iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
