//! Occupancy estimation from CO₂ and weekday-bank occupancy prediction.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::building::{CO2_GENERATION, PPM_TO_MASS_FRACTION, SECONDS_PER_HOUR};
use crate::calendar::{Calendar, DayKind, HOURS_PER_DAY};
use crate::error::{invalid, Error, Result};
use crate::kernels::{KernelSpec, LtiSde, MaternKernel, PeriodicKernel};
use crate::ssm::{discretize, fit_hyperparameters, DiscreteModel, GaussianState, TimeSeries};
use crate::ukf::UkfParams;

pub const WEEKDAY_NAMES: [&str; 5] = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday"];
/// Grid step shared by every occupancy model, hours.
pub const STEP_HOURS: f64 = 0.25;

/// Measured CO₂ in one zone on a regular grid, plus the ventilation inputs
/// held over each interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Co2Series {
    pub start: f64,
    pub step: f64,
    /// Mass fraction, kg/kg.
    pub co2: Vec<Option<f64>>,
    pub supply_co2: Vec<f64>,
    /// kg/s, held over `[t_k, t_{k+1})`.
    pub air_flow: Vec<f64>,
    /// kg.
    pub air_mass: f64,
}

impl Co2Series {
    pub fn validate(&self) -> Result<()> {
        let n = self.co2.len();
        if self.supply_co2.len() != n || self.air_flow.len() != n {
            return Err(invalid("co2", "supply and flow traces must match the measurement length"));
        }
        if !(self.air_mass > 0.0) {
            return Err(invalid("air_mass", "must be > 0"));
        }
        if !(self.step > 0.0) {
            return Err(invalid("step", "must be > 0"));
        }
        if self.co2.iter().flatten().any(|x| !(*x >= 0.0)) || self.supply_co2.iter().any(|x| !(*x >= 0.0)) {
            return Err(invalid("co2", "concentrations must be >= 0"));
        }
        if self.air_flow.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid("air_flow", "mass flow must be >= 0"));
        }
        Ok(())
    }
}

/// Occupant counts on a regular grid. `values` may hold gaps; `variance` is 0
/// where no estimate exists.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySeries {
    pub start: f64,
    pub step: f64,
    pub values: Vec<Option<f64>>,
    pub variance: Vec<f64>,
}

impl OccupancySeries {
    pub fn from_counts(start: f64, step: f64, counts: &[f64]) -> Self {
        Self { start, step, values: counts.iter().map(|v| Some(*v)).collect(), variance: vec![0.0; counts.len()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    /// Non-negative counts for reporting.
    pub fn reported(&self) -> Vec<Option<f64>> {
        self.values.iter().map(|v| v.map(|x| x.max(0.0))).collect()
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = ((t - self.start) / self.step).round();
        (k >= 0.0 && (k as usize) < self.values.len()).then_some(k as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub ukf: UkfParams,
    /// kg/s per person.
    pub generation: f64,
    /// Random-walk variance of `X` per step.
    pub co2_process_var: f64,
    /// Random-walk variance of `g·N` per step; defaults to `(g·1)²`.
    pub source_process_var: Option<f64>,
    /// Measurement noise variance of `X`.
    pub measurement_var: f64,
    /// Prior standard deviation of `g·N`, in persons.
    pub prior_persons_sd: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            ukf: UkfParams::default(),
            generation: CO2_GENERATION,
            co2_process_var: (1e-6f64).powi(2),
            source_process_var: None,
            measurement_var: PPM_TO_MASS_FRACTION * PPM_TO_MASS_FRACTION,
            prior_persons_sd: 3.0,
        }
    }
}

impl EstimatorConfig {
    pub fn source_var(&self) -> f64 {
        self.source_process_var.unwrap_or(self.generation * self.generation)
    }
}

/// CO₂ after `seconds` with constant flow and source, solved in closed form.
pub fn co2_transition(x: f64, source: f64, air_flow: f64, supply: f64, air_mass: f64, seconds: f64) -> f64 {
    let rate = air_flow / air_mass;
    if rate * seconds < 1e-12 {
        return x + seconds * (air_flow * (supply - x) + source) / air_mass;
    }
    let x_eq = supply + source / air_flow;
    x_eq + (x - x_eq) * (-rate * seconds).exp()
}

/// Joint UKF over `[X, g·N]`, with `g·N` a random walk. The first sample
/// initializes the filter.
pub fn ukf_estimate(series: &Co2Series, cfg: &EstimatorConfig) -> Result<OccupancySeries> {
    series.validate()?;
    if !(cfg.generation > 0.0) {
        return Err(invalid("generation", "must be > 0"));
    }
    let g = cfg.generation;
    let seconds = series.step * SECONDS_PER_HOUR;
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![cfg.co2_process_var, cfg.source_var()]));
    let r = DMatrix::from_element(1, 1, cfg.measurement_var);
    let x0 = series.co2.iter().flatten().next().copied().unwrap_or(series.supply_co2.first().copied().unwrap_or(0.0));
    let mut belief = GaussianState::new(
        DVector::from_vec(vec![x0, 0.0]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            cfg.measurement_var.max(1e-30),
            (cfg.prior_persons_sd * g).powi(2),
        ])),
    );
    let mut values = Vec::with_capacity(series.co2.len());
    let mut variance = Vec::with_capacity(series.co2.len());
    for k in 0..series.co2.len() {
        if k > 0 {
            let (m, xs, mz) = (series.air_flow[k - 1], series.supply_co2[k - 1], series.air_mass);
            belief = cfg.ukf.predict(
                &belief,
                |s| DVector::from_vec(vec![co2_transition(s[0], s[1], m, xs, mz, seconds), s[1]]),
                &q,
            )?;
        }
        if let Some(y) = series.co2[k] {
            belief = cfg.ukf.update(&belief, &DVector::from_element(1, y), |s| DVector::from_element(1, s[0]), &r)?;
        }
        values.push(Some(belief.mean[1] / g));
        variance.push(belief.cov[(1, 1)].max(0.0) / (g * g));
    }
    Ok(OccupancySeries { start: series.start, step: series.step, values, variance })
}

/// Quasi-periodic template: daily periodic factor damped by a Matérn-½ kernel.
pub fn default_template() -> KernelSpec {
    KernelSpec::QuasiPeriodic {
        periodic: PeriodicKernel { sigma2: 4.0, ell: 1.0, omega0: TAU / HOURS_PER_DAY, order: 10 },
        damping: MaternKernel { p: 0, sigma2: 1.0, ell: 72.0 },
    }
}

fn check_template(spec: &KernelSpec) -> Result<()> {
    spec.validate()?;
    match spec {
        KernelSpec::QuasiPeriodic { periodic, damping } => {
            if damping.p != 0 {
                return Err(invalid("template", "damping factor must be Matérn with p = 0"));
            }
            if (periodic.omega0 - TAU / HOURS_PER_DAY).abs() > 1e-9 {
                return Err(invalid("template", "periodic factor must have a 24 h period"));
            }
            Ok(())
        }
        _ => Err(invalid("template", "must be quasi-periodic")),
    }
}

#[derive(Debug, Clone)]
pub struct WeekdayModel {
    pub spec: KernelSpec,
    pub sde: LtiSde,
    pub model: DiscreteModel,
    pub noise_var: f64,
    pub fit_nlml: Option<f64>,
    pub hit_iteration_cap: bool,
}

impl WeekdayModel {
    fn new(spec: KernelSpec, noise_var: f64) -> Result<Self> {
        let sde = spec.to_state_space()?;
        let model = discretize(&sde, STEP_HOURS)?.with_noise(noise_var);
        Ok(Self { spec, sde, model, noise_var, fit_nlml: None, hit_iteration_cap: false })
    }

    pub fn prior(&self) -> GaussianState {
        GaussianState::zero_mean(self.sde.pinf.clone())
    }
}

/// Five independent latent models, Monday through Friday. Each runs on its
/// own time axis in which consecutive occurrences of its weekday are
/// concatenated.
#[derive(Debug, Clone)]
pub struct WeekdayBank {
    pub models: Vec<WeekdayModel>,
    pub calendar: Calendar,
}

impl WeekdayBank {
    pub fn from_specs(specs: Vec<KernelSpec>, noise_var: f64, calendar: Calendar) -> Result<Self> {
        if specs.len() != 5 {
            return Err(invalid("bank", "exactly five weekday models are required"));
        }
        let models = specs.into_iter().map(|s| WeekdayModel::new(s, noise_var)).collect::<Result<_>>()?;
        Ok(Self { models, calendar })
    }

    pub fn step(&self) -> f64 {
        STEP_HOURS
    }

    /// Position of `t` on its weekday model's time axis, hours.
    pub fn latent_time(&self, t: f64) -> f64 {
        self.calendar.week_index(t) as f64 * HOURS_PER_DAY + self.calendar.hour_of_day(t)
    }

    pub fn state_dim(&self) -> usize {
        self.models[0].model.dim()
    }
}

/// Splits a series into one latent-time series per weekday.
pub fn split_by_weekday(estimates: &OccupancySeries, calendar: &Calendar) -> Vec<TimeSeries> {
    let mut parts: Vec<(Vec<f64>, Vec<Option<f64>>)> = vec![(Vec::new(), Vec::new()); 5];
    for (k, v) in estimates.values.iter().enumerate() {
        let t = estimates.time(k);
        if let DayKind::Weekday(d) = calendar.day_kind(t) {
            let pos = calendar.week_index(t) as f64 * HOURS_PER_DAY + calendar.hour_of_day(t);
            parts[d].0.push(pos);
            parts[d].1.push(*v);
        }
    }
    parts
        .into_iter()
        .map(|(t, v)| TimeSeries::new(t, v).expect("latent times increase with wall-clock time"))
        .collect()
}

pub fn build_bank(
    estimates: &OccupancySeries,
    template: &KernelSpec,
    noise_var: f64,
    fit: bool,
    calendar: Calendar,
) -> Result<WeekdayBank> {
    check_template(template)?;
    if (estimates.step - STEP_HOURS).abs() > 1e-9 {
        return Err(invalid("step", format!("estimates must be sampled every {STEP_HOURS} h")));
    }
    let per_day = (HOURS_PER_DAY / STEP_HOURS).round() as usize;
    let parts = split_by_weekday(estimates, &calendar);
    for (d, p) in parts.iter().enumerate() {
        if p.observed_count() < per_day {
            return Err(Error::InsufficientData(format!(
                "{} has {} samples, at least one day ({per_day}) is required",
                WEEKDAY_NAMES[d],
                p.observed_count()
            )));
        }
    }
    let models = parts
        .par_iter()
        .map(|data| -> Result<WeekdayModel> {
            if !fit {
                return WeekdayModel::new(*template, noise_var);
            }
            let res = fit_hyperparameters(template, data, noise_var)?;
            let mut m = WeekdayModel::new(res.spec, res.noise_var)?;
            m.fit_nlml = Some(res.nlml);
            m.hit_iteration_cap = res.hit_iteration_cap;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeekdayBank { models, calendar })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentEntry {
    pub belief: GaussianState,
    /// Latent time of the belief.
    pub position: f64,
}

/// Filtered latent state of every weekday model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentStates {
    pub entries: [Option<LatentEntry>; 5],
}

fn steps_between(from: f64, to: f64) -> usize {
    let k = ((to - from) / STEP_HOURS).round();
    if k > 0.0 {
        k as usize
    } else {
        0
    }
}

impl LatentStates {
    /// Belief of weekday model `d` propagated to latent time `position`
    /// (the prior when the model has no state yet).
    pub fn belief_at(&self, bank: &WeekdayBank, d: usize, position: f64) -> GaussianState {
        let m = &bank.models[d];
        match &self.entries[d] {
            None => m.prior(),
            Some(e) => {
                let mut b = e.belief.clone();
                for _ in 0..steps_between(e.position, position) {
                    b = m.model.predict(&b);
                }
                b
            }
        }
    }

    /// Filters one sample at wall-clock time `t`. Weekend samples are ignored.
    pub fn assimilate(&mut self, bank: &WeekdayBank, t: f64, y: Option<f64>) -> Result<()> {
        let DayKind::Weekday(d) = bank.calendar.day_kind(t) else {
            return Ok(());
        };
        let pos = bank.latent_time(t);
        if let Some(e) = &self.entries[d] {
            if pos <= e.position - 1e-9 {
                return Err(invalid("t", "samples must be assimilated in time order"));
            }
        }
        let prior = self.belief_at(bank, d, pos);
        let belief = match y {
            Some(v) => crate::ssm::filter_update(&bank.models[d].model, &prior, v)?.0,
            None => prior,
        };
        self.entries[d] = Some(LatentEntry { belief, position: pos });
        Ok(())
    }

    /// Replaces the state of one weekday model.
    pub fn set(&mut self, bank: &WeekdayBank, t: f64, belief: GaussianState) {
        if let DayKind::Weekday(d) = bank.calendar.day_kind(t) {
            self.entries[d] = Some(LatentEntry { belief, position: bank.latent_time(t) });
        }
    }

    pub fn get(&self, bank: &WeekdayBank, t: f64) -> Option<&LatentEntry> {
        match bank.calendar.day_kind(t) {
            DayKind::Weekday(d) => self.entries[d].as_ref(),
            DayKind::Weekend => None,
        }
    }
}

/// Occupancy forecast on `now + s·Δt`, `s = 0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Latent output `H·z`, unclamped.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Set when a weekday without a stored state was reached.
    pub used_prior: bool,
}

impl Forecast {
    /// Values handed to the controller, clamped at zero.
    pub fn clamped(&self) -> Vec<f64> {
        self.mean.iter().map(|v| v.max(0.0)).collect()
    }
}

struct Cursor {
    mean: DVector<f64>,
    cov: Option<DMatrix<f64>>,
    position: f64,
}

fn forecast_impl(bank: &WeekdayBank, latents: &LatentStates, now: f64, len: usize, with_variance: bool) -> Forecast {
    let mut cursors: [Option<Cursor>; 5] = Default::default();
    let mut out = Forecast { mean: Vec::with_capacity(len), variance: Vec::with_capacity(len), used_prior: false };
    for s in 0..len {
        let t = now + s as f64 * STEP_HOURS;
        let DayKind::Weekday(d) = bank.calendar.day_kind(t) else {
            out.mean.push(0.0);
            out.variance.push(0.0);
            continue;
        };
        let m = &bank.models[d];
        let pos = bank.latent_time(t);
        let c = cursors[d].get_or_insert_with(|| match &latents.entries[d] {
            Some(e) => Cursor {
                mean: e.belief.mean.clone(),
                cov: with_variance.then(|| e.belief.cov.clone()),
                position: e.position,
            },
            None => {
                out.used_prior = true;
                Cursor {
                    mean: DVector::zeros(m.model.dim()),
                    cov: with_variance.then(|| m.sde.pinf.clone()),
                    position: pos,
                }
            }
        });
        for _ in 0..steps_between(c.position, pos) {
            c.mean = &m.model.a * &c.mean;
            if let Some(p) = &mut c.cov {
                *p = &m.model.a * &*p * m.model.a.transpose() + &m.model.q;
            }
        }
        c.position = c.position.max(pos);
        out.mean.push(m.model.output(&c.mean));
        out.variance.push(c.cov.as_ref().map_or(0.0, |p| (&m.model.h * p * m.model.h.transpose())[(0, 0)]));
    }
    out
}

/// Open-loop forecast of `len` values starting at `now`. Crossing midnight
/// hands over to the next weekday's model and its stored state; weekend
/// values are zero.
pub fn predict_occupancy(bank: &WeekdayBank, latents: &LatentStates, now: f64, len: usize) -> Forecast {
    forecast_impl(bank, latents, now, len, true)
}

/// Mean-only variant of [`predict_occupancy`].
pub fn predict_occupancy_mean(bank: &WeekdayBank, latents: &LatentStates, now: f64, len: usize) -> Forecast {
    forecast_impl(bank, latents, now, len, false)
}

/// Source of occupancy forecasts for a single zone.
pub trait OccupancyPredictor {
    /// Receives the estimate for wall-clock time `t`.
    fn observe(&mut self, t: f64, y: Option<f64>) -> Result<()>;
    /// Non-negative forecast on `now + s·Δt`, `s = 0..len`.
    fn forecast(&self, now: f64, len: usize) -> Vec<f64>;
}

pub struct LfmPredictor {
    pub bank: WeekdayBank,
    pub latents: LatentStates,
}

impl LfmPredictor {
    pub fn new(bank: WeekdayBank) -> Self {
        Self { bank, latents: LatentStates::default() }
    }
}

impl OccupancyPredictor for LfmPredictor {
    fn observe(&mut self, t: f64, y: Option<f64>) -> Result<()> {
        self.latents.assimilate(&self.bank, t, y)
    }

    fn forecast(&self, now: f64, len: usize) -> Vec<f64> {
        predict_occupancy_mean(&self.bank, &self.latents, now, len).clamped()
    }
}

/// Persistence baseline: repeats the latest estimate.
#[derive(Debug, Clone, Default)]
pub struct ZeroOrderHold {
    last: f64,
}

impl OccupancyPredictor for ZeroOrderHold {
    fn observe(&mut self, _t: f64, y: Option<f64>) -> Result<()> {
        if let Some(v) = y {
            self.last = v.max(0.0);
        }
        Ok(())
    }

    fn forecast(&self, _now: f64, len: usize) -> Vec<f64> {
        vec![self.last; len]
    }
}

/// Reads the realized series; zero outside it.
#[derive(Debug, Clone)]
pub struct PerfectForesight {
    pub truth: OccupancySeries,
}

impl OccupancyPredictor for PerfectForesight {
    fn observe(&mut self, _t: f64, _y: Option<f64>) -> Result<()> {
        Ok(())
    }

    fn forecast(&self, now: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|s| {
                let t = now + s as f64 * self.truth.step;
                self.truth.index_of(t).and_then(|k| self.truth.values[k]).unwrap_or(0.0).max(0.0)
            })
            .collect()
    }
}

/// Summed prediction RMSE: at each step, after observing that step's
/// estimate, forecast the next `horizon_steps` values and score them against
/// the realized estimates. Steps from `eval_from` onward are scored.
pub fn prediction_rmse<P: OccupancyPredictor>(
    predictor: &mut P,
    estimates: &OccupancySeries,
    horizon_steps: usize,
    eval_from: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..estimates.len() {
        let t = estimates.time(k);
        predictor.observe(t, estimates.values[k])?;
        if k < eval_from {
            continue;
        }
        let f = predictor.forecast(t, horizon_steps + 1);
        let (mut sq, mut n) = (0.0, 0usize);
        for s in 1..=horizon_steps {
            if let Some(Some(truth)) = estimates.values.get(k + s) {
                sq += (f[s] - truth.max(0.0)).powi(2);
                n += 1;
            }
        }
        if n > 0 {
            total += (sq / n as f64).sqrt();
        }
    }
    Ok(total)
}
