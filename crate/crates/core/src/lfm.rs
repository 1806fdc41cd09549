//! Latent force models of zone occupancy: the mechanistic zone model stacked
//! with a latent GP state, and the observer that estimates both jointly.
//!
//! Inside this module CO₂ is carried in ppm so that every state has an O(1)
//! scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::building::{zone_derivative, ControlInput, SupplyConditions, ZoneParams, ZoneState, PPM_TO_MASS_FRACTION, SECONDS_PER_HOUR};
use crate::calendar::DayKind;
use crate::error::{invalid, Result};
use crate::occupancy::{predict_occupancy_mean, LatentEntry, LatentStates, WeekdayBank};
use crate::ssm::{DiscreteModel, GaussianState};
use crate::ukf::UkfParams;

/// Number of mechanistic states per zone: `T_z, T_w, T_r, X`.
pub const N_X: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Occupancy enters as `max(0, H·z)`.
    Clamped,
    /// Occupancy enters as `H·z`.
    Linear,
}

impl Injection {
    pub fn apply(self, d: f64) -> f64 {
        match self {
            Injection::Clamped => d.max(0.0),
            Injection::Linear => d,
        }
    }
}

/// Known inputs of one zone over a grid interval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZoneInputs {
    pub control: ControlInput,
    pub ambient: f64,
    /// `(temperature, resistance)` of every coupled neighbour.
    pub neighbors: Vec<(f64, f64)>,
}

/// Zone model with `n_z` latent occupancy states appended: `[T_z, T_w, T_r, X_ppm, z…]`.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub zone: ZoneParams,
    pub supply: SupplyConditions,
    /// Discretized latent model; `None` for the purely mechanistic model.
    pub latent: Option<DiscreteModel>,
    pub injection: Injection,
    pub substeps: usize,
    /// Grid step, hours.
    pub dt: f64,
}

pub fn augment(
    zone: &ZoneParams,
    supply: &SupplyConditions,
    latent: &DiscreteModel,
    injection: Injection,
    substeps: usize,
) -> AugmentedModel {
    AugmentedModel {
        zone: zone.clone(),
        supply: *supply,
        latent: Some(latent.clone()),
        injection,
        substeps: substeps.max(1),
        dt: latent.dt,
    }
}

impl AugmentedModel {
    pub fn mechanistic(zone: &ZoneParams, supply: &SupplyConditions, dt: f64, substeps: usize) -> Self {
        Self { zone: zone.clone(), supply: *supply, latent: None, injection: Injection::Clamped, substeps: substeps.max(1), dt }
    }

    pub fn n_z(&self) -> usize {
        self.latent.as_ref().map_or(0, |m| m.dim())
    }

    pub fn dim(&self) -> usize {
        N_X + self.n_z()
    }

    /// Occupancy injected into the zone for state `s`.
    pub fn disturbance(&self, s: &DVector<f64>) -> f64 {
        match &self.latent {
            None => 0.0,
            Some(m) => self.injection.apply((&m.h * s.rows(N_X, m.dim()))[0]),
        }
    }

    /// Zone-state derivative per second with occupancy `occ` held fixed.
    pub fn zone_drift(&self, x: &[f64; 4], occ: f64, inp: &ZoneInputs) -> [f64; 4] {
        let s = ZoneState { tz: x[0], tw: x[1], tr: x[2], x: x[3] * PPM_TO_MASS_FRACTION };
        let coupling: f64 = inp.neighbors.iter().map(|(t, r)| (t - x[0]) / r).sum();
        let d = zone_derivative(&s, &inp.control, inp.ambient, occ, coupling, &self.zone, &self.supply);
        [d.tz, d.tw, d.tr, d.x / PPM_TO_MASS_FRACTION]
    }

    /// One grid step: RK4 on the zone with the disturbance held, exact
    /// transition on the latent block.
    pub fn transition(&self, s: &DVector<f64>, inp: &ZoneInputs) -> DVector<f64> {
        let occ = self.disturbance(s);
        let h = self.dt * SECONDS_PER_HOUR / self.substeps as f64;
        let mut x = [s[0], s[1], s[2], s[3]];
        let add = |a: &[f64; 4], k: &[f64; 4], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2], a[3] + c * k[3]];
        for _ in 0..self.substeps {
            let k1 = self.zone_drift(&x, occ, inp);
            let k2 = self.zone_drift(&add(&x, &k1, 0.5 * h), occ, inp);
            let k3 = self.zone_drift(&add(&x, &k2, 0.5 * h), occ, inp);
            let k4 = self.zone_drift(&add(&x, &k3, h), occ, inp);
            for i in 0..4 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, N_X).copy_from_slice(&x);
        if let Some(m) = &self.latent {
            out.rows_mut(N_X, m.dim()).copy_from(&(&m.a * s.rows(N_X, m.dim())));
        }
        out
    }

    /// Affine form `s' = M s + c` of [`Self::transition`], exact when the
    /// injection is linear (the map is then affine for fixed inputs).
    pub fn linearized_transition(&self, inp: &ZoneInputs) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let zero = DVector::zeros(n);
        let c = self.transition(&zero, inp);
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = zero.clone();
            e[j] = 1.0;
            m.set_column(j, &(self.transition(&e, inp) - &c));
        }
        (m, c)
    }

    /// Sensitivity of one step to the controls, by forward differences.
    pub fn input_sensitivity(&self, s: &DVector<f64>, inp: &ZoneInputs, eps: f64) -> DMatrix<f64> {
        let base = self.transition(s, inp);
        let mut b = DMatrix::zeros(self.dim(), 2);
        for j in 0..2 {
            let mut pert = inp.clone();
            if j == 0 {
                pert.control.air += eps;
            } else {
                pert.control.water += eps;
            }
            b.set_column(j, &((self.transition(s, &pert) - &base) / eps));
        }
        b
    }

    /// Block-diagonal process noise: `q_x` on the zone states, the latent `Q`.
    pub fn process_noise(&self, q_x: &[f64; 4]) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..N_X {
            q[(i, i)] = q_x[i];
        }
        if let Some(m) = &self.latent {
            q.view_mut((N_X, N_X), (m.dim(), m.dim())).copy_from(&m.q);
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverConfig {
    pub ukf: UkfParams,
    /// Per-step process noise of `T_z, T_w, T_r` (K²) and `X` (ppm²).
    pub process_var: [f64; 4],
    pub temperature_var: f64,
    /// ppm².
    pub co2_var: f64,
    /// Initial variance of the zone states.
    pub initial_var: [f64; 4],
    pub injection: Injection,
    pub substeps: usize,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            ukf: UkfParams::default(),
            process_var: [1e-4, 1e-4, 1e-2, 1.0],
            temperature_var: 0.01,
            co2_var: 4.0,
            initial_var: [0.25, 1.0, 4.0, 100.0],
            injection: Injection::Clamped,
            substeps: 3,
        }
    }
}

/// Measured `T_z` (°C) and `X` (kg/kg).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneMeasurement {
    pub tz: f64,
    pub co2: f64,
}

/// Joint state and occupancy estimator of one zone. On weekdays the state is
/// augmented with that weekday's latent model; on weekends the zone model
/// runs alone with zero occupancy.
#[derive(Debug, Clone)]
pub struct ZoneObserver {
    pub bank: WeekdayBank,
    pub cfg: ObserverConfig,
    weekday_models: Vec<AugmentedModel>,
    weekend_model: AugmentedModel,
    belief: GaussianState,
    kind: DayKind,
    time: f64,
    /// Stored latent beliefs of the inactive weekday models.
    stored: LatentStates,
}

impl ZoneObserver {
    pub fn new(
        zone: &ZoneParams,
        supply: &SupplyConditions,
        bank: WeekdayBank,
        latents: LatentStates,
        cfg: ObserverConfig,
        t0: f64,
        x0: &ZoneState,
    ) -> Result<Self> {
        zone.validate()?;
        let weekday_models = bank.models.iter().map(|m| augment(zone, supply, &m.model, cfg.injection, cfg.substeps)).collect();
        let weekend_model = AugmentedModel::mechanistic(zone, supply, bank.step(), cfg.substeps);
        let mean = DVector::from_vec(vec![x0.tz, x0.tw, x0.tr, x0.x / PPM_TO_MASS_FRACTION]);
        let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&cfg.initial_var));
        let mut obs = Self {
            kind: DayKind::Weekend,
            weekday_models,
            weekend_model,
            belief: GaussianState::new(mean, cov),
            time: t0,
            stored: latents,
            bank,
            cfg,
        };
        if obs.bank.calendar.day_kind(t0) != DayKind::Weekend {
            obs.switch_day(t0, t0);
        }
        Ok(obs)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn belief(&self) -> &GaussianState {
        &self.belief
    }

    fn model(&self) -> &AugmentedModel {
        match self.kind {
            DayKind::Weekday(d) => &self.weekday_models[d],
            DayKind::Weekend => &self.weekend_model,
        }
    }

    /// Stores the active latent block (already propagated one step past its
    /// last sample at `prev_time`) and attaches the block of the day of `t`.
    fn switch_day(&mut self, prev_time: f64, t: f64) {
        if let DayKind::Weekday(d) = self.kind {
            let nz = self.belief.dim() - N_X;
            let belief = GaussianState::new(
                self.belief.mean.rows(N_X, nz).into_owned(),
                self.belief.cov.view((N_X, N_X), (nz, nz)).into_owned(),
            );
            let position = self.bank.latent_time(prev_time) + self.bank.step();
            self.stored.entries[d] = Some(LatentEntry { belief, position });
        }
        let x_mean = self.belief.mean.rows(0, N_X).into_owned();
        let x_cov = self.belief.cov.view((0, 0), (N_X, N_X)).into_owned();
        self.kind = self.bank.calendar.day_kind(t);
        self.belief = match self.kind {
            DayKind::Weekend => GaussianState::new(x_mean, x_cov),
            DayKind::Weekday(d) => {
                let latent = self.stored.belief_at(&self.bank, d, self.bank.latent_time(t));
                let nz = latent.dim();
                let mut mean = DVector::zeros(N_X + nz);
                mean.rows_mut(0, N_X).copy_from(&x_mean);
                mean.rows_mut(N_X, nz).copy_from(&latent.mean);
                let mut cov = DMatrix::zeros(N_X + nz, N_X + nz);
                cov.view_mut((0, 0), (N_X, N_X)).copy_from(&x_cov);
                cov.view_mut((N_X, N_X), (nz, nz)).copy_from(&latent.cov);
                GaussianState::new(mean, cov)
            }
        };
    }

    /// Predicts over `[time, t]` with `inputs` held, switches day models when
    /// `t` falls on another day, and updates with `y` when present.
    pub fn step(&mut self, t: f64, inputs: &ZoneInputs, y: Option<ZoneMeasurement>) -> Result<()> {
        if !(t > self.time) {
            return Err(invalid("t", "observer steps must advance in time"));
        }
        let model = self.model();
        let q = model.process_noise(&self.cfg.process_var);
        self.belief = self.cfg.ukf.predict(&self.belief, |s| model.transition(s, inputs), &q)?;
        let prev = self.time;
        self.time = t;
        if self.bank.calendar.day_kind(t) != self.kind {
            self.switch_day(prev, t);
        }
        if let Some(m) = y {
            self.update(m)?;
        }
        Ok(())
    }

    fn update(&mut self, m: ZoneMeasurement) -> Result<()> {
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![self.cfg.temperature_var, self.cfg.co2_var]));
        let y = DVector::from_vec(vec![m.tz, m.co2 / PPM_TO_MASS_FRACTION]);
        let h = |s: &DVector<f64>| DVector::from_vec(vec![s[0], s[3]]);
        self.belief = self.cfg.ukf.update(&self.belief, &y, h, &r)?;
        Ok(())
    }

    /// Estimated zone state in physical units.
    pub fn zone_state(&self) -> ZoneState {
        let m = &self.belief.mean;
        ZoneState { tz: m[0], tw: m[1], tr: m[2], x: m[3] * PPM_TO_MASS_FRACTION }
    }

    /// Latent output `H·ẑ` (unclamped); 0 on weekends.
    pub fn occupancy_estimate(&self) -> f64 {
        match self.kind {
            DayKind::Weekday(d) => {
                let m = &self.weekday_models[d];
                let h = &m.latent.as_ref().expect("weekday models carry a latent block").h;
                (h * self.belief.mean.rows(N_X, m.n_z()))[0]
            }
            DayKind::Weekend => 0.0,
        }
    }

    /// Latent beliefs of all weekday models, including the active one.
    pub fn latent_states(&self) -> LatentStates {
        let mut l = self.stored.clone();
        if let DayKind::Weekday(_) = self.kind {
            let nz = self.belief.dim() - N_X;
            l.set(
                &self.bank,
                self.time,
                GaussianState::new(
                    self.belief.mean.rows(N_X, nz).into_owned(),
                    self.belief.cov.view((N_X, N_X), (nz, nz)).into_owned(),
                ),
            );
        }
        l
    }

    /// Clamped occupancy forecast on `time + s·Δt`, `s = 0..len`.
    pub fn disturbance_trajectory(&self, len: usize) -> Vec<f64> {
        disturbance_trajectory(&self.bank, &self.latent_states(), self.time, len)
    }
}

/// Clamped occupancy forecast from stored latent beliefs.
pub fn disturbance_trajectory(bank: &WeekdayBank, latents: &LatentStates, now: f64, len: usize) -> Vec<f64> {
    predict_occupancy_mean(bank, latents, now, len).clamped()
}
