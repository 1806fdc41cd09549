//! Single-shooting OCP over the joint thermal model of all zones, solved by
//! projected gradient descent with adjoint gradients.

use serde::{Deserialize, Serialize};

use super::{penalty, penalty_derivative, Band};
use crate::building::{Building, ControlInput, ZoneState, SECONDS_PER_HOUR};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcpConfig {
    /// Prediction horizon, hours.
    pub horizon: f64,
    /// Control interval, hours.
    pub step: f64,
    /// Weights on squared air and water mass flow, (kg/s)⁻² per hour.
    pub r_air: f64,
    pub r_water: f64,
    /// Weight of the comfort penalty, per hour.
    pub penalty_weight: f64,
    pub u_min: ControlInput,
    pub u_max: ControlInput,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// RK4 substeps per control interval in the prediction model.
    pub substeps: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 6.0,
            step: 0.25,
            r_air: 1.0,
            r_water: 1.0,
            penalty_weight: 0.01,
            u_min: ControlInput { air: 0.02, water: 0.0 },
            u_max: ControlInput { air: 0.3, water: 0.1 },
            max_iterations: 40,
            tolerance: 1e-8,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            substeps: 3,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(invalid("horizon", "must be > 0"));
        }
        if !(self.step > 0.0) {
            return Err(invalid("step", "must be > 0"));
        }
        if !(self.penalty_weight >= 0.0 && self.r_air >= 0.0 && self.r_water >= 0.0) {
            return Err(invalid("penalty_weight", "weights must be >= 0"));
        }
        if !(0.0 <= self.u_min.air && self.u_min.air <= self.u_max.air)
            || !(0.0 <= self.u_min.water && self.u_min.water <= self.u_max.water)
        {
            return Err(invalid("u_min", "control bounds must satisfy 0 <= u_min <= u_max"));
        }
        if !(0.0 < self.backtrack && self.backtrack < 1.0) {
            return Err(invalid("backtrack", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct ZoneCoeffs {
    inv_cz: f64,
    inv_cw: f64,
    inv_cr: f64,
    gzw: f64,
    gzr: f64,
    gwa: f64,
    ca: f64,
    cw: f64,
    qocc: f64,
}

/// Thermal part of a [`Building`] flattened to `[T_z, T_w, T_r]` per zone.
#[derive(Debug, Clone)]
pub struct ThermalModel {
    zones: Vec<ZoneCoeffs>,
    couplings: Vec<(usize, usize, f64)>,
    supply_air: f64,
    supply_water: f64,
}

impl ThermalModel {
    pub fn from_building(b: &Building) -> Self {
        Self {
            zones: b
                .zones
                .iter()
                .map(|p| ZoneCoeffs {
                    inv_cz: 1.0 / p.cap_zone,
                    inv_cw: 1.0 / p.cap_wall,
                    inv_cr: 1.0 / p.cap_radiator,
                    gzw: 1.0 / p.r_zone_wall,
                    gzr: 1.0 / p.r_zone_radiator,
                    gwa: 1.0 / p.r_wall_ambient,
                    ca: p.cp_air,
                    cw: p.cp_water,
                    qocc: p.q_occ,
                })
                .collect(),
            couplings: b.couplings.iter().map(|c| (c.a, c.b, 1.0 / c.r)).collect(),
            supply_air: b.supply.air_temp,
            supply_water: b.supply.water_temp,
        }
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn n_states(&self) -> usize {
        3 * self.zones.len()
    }

    fn f(&self, x: &[f64], u: &[f64], ta: f64, occ: &[f64], out: &mut [f64]) {
        for (i, z) in self.zones.iter().enumerate() {
            let (tz, tw, tr) = (x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            let (ma, mw) = (u[2 * i], u[2 * i + 1]);
            out[3 * i] = z.gzw * (tw - tz) + z.gzr * (tr - tz) + z.ca * ma * (self.supply_air - tz) + z.qocc * occ[i];
            out[3 * i + 1] = (z.gzw * (tz - tw) + z.gwa * (ta - tw)) * z.inv_cw;
            out[3 * i + 2] = (z.gzr * (tz - tr) + z.cw * mw * (self.supply_water - tr)) * z.inv_cr;
        }
        for &(a, b, g) in &self.couplings {
            let q = g * (x[3 * b] - x[3 * a]);
            out[3 * a] += q;
            out[3 * b] -= q;
        }
        for (i, z) in self.zones.iter().enumerate() {
            out[3 * i] *= z.inv_cz;
        }
    }

    /// Adds `λᵀ ∂f/∂x` to `xbar` and `λᵀ ∂f/∂u` to `ubar`.
    fn vjp(&self, x: &[f64], u: &[f64], lam: &[f64], xbar: &mut [f64], ubar: &mut [f64]) {
        for (i, z) in self.zones.iter().enumerate() {
            let (tz, tr) = (x[3 * i], x[3 * i + 2]);
            let (ma, mw) = (u[2 * i], u[2 * i + 1]);
            let mz = lam[3 * i] * z.inv_cz;
            let mwl = lam[3 * i + 1] * z.inv_cw;
            let mr = lam[3 * i + 2] * z.inv_cr;
            xbar[3 * i] += -mz * (z.gzw + z.gzr + z.ca * ma) + mwl * z.gzw + mr * z.gzr;
            xbar[3 * i + 1] += mz * z.gzw - mwl * (z.gzw + z.gwa);
            xbar[3 * i + 2] += mz * z.gzr - mr * (z.gzr + z.cw * mw);
            ubar[2 * i] += mz * z.ca * (self.supply_air - tz);
            ubar[2 * i + 1] += mr * z.cw * (self.supply_water - tr);
        }
        for &(a, b, g) in &self.couplings {
            let ma = lam[3 * a] * self.zones[a].inv_cz;
            let mb = lam[3 * b] * self.zones[b].inv_cz;
            xbar[3 * a] += g * (mb - ma);
            xbar[3 * b] += g * (ma - mb);
        }
    }

    /// RK4 step of `h` seconds; fills the four stage states.
    fn rk4(&self, x: &[f64], u: &[f64], ta: f64, occ: &[f64], h: f64, stages: &mut [Vec<f64>; 4], k: &mut [Vec<f64>; 4], out: &mut [f64]) {
        let n = x.len();
        stages[0].copy_from_slice(x);
        self.f(&stages[0], u, ta, occ, &mut k[0]);
        for i in 0..n {
            stages[1][i] = x[i] + 0.5 * h * k[0][i];
        }
        self.f(&stages[1], u, ta, occ, &mut k[1]);
        for i in 0..n {
            stages[2][i] = x[i] + 0.5 * h * k[1][i];
        }
        self.f(&stages[2], u, ta, occ, &mut k[2]);
        for i in 0..n {
            stages[3][i] = x[i] + h * k[2][i];
        }
        self.f(&stages[3], u, ta, occ, &mut k[3]);
        for i in 0..n {
            out[i] = x[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }

    /// Advances one control interval of `dt_hours` in `substeps` RK4 steps.
    pub fn advance(&self, x: &[f64], u: &[f64], ta: f64, occ: &[f64], dt_hours: f64, substeps: usize) -> Vec<f64> {
        let n = x.len();
        let h = dt_hours * SECONDS_PER_HOUR / substeps as f64;
        let mut stages: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut cur = x.to_vec();
        let mut next = vec![0.0; n];
        for _ in 0..substeps {
            self.rk4(&cur, u, ta, occ, h, &mut stages, &mut k, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

pub fn thermal_vector(states: &[ZoneState]) -> Vec<f64> {
    states.iter().flat_map(|s| [s.tz, s.tw, s.tr]).collect()
}

/// Data of one OCP instance over `N` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    /// Initial `[T_z, T_w, T_r]` of every zone.
    pub x0: Vec<f64>,
    /// Ambient temperature held over interval `j`.
    pub ambient: Vec<f64>,
    /// `occupancy[j][zone]`, held over interval `j`.
    pub occupancy: Vec<Vec<f64>>,
    /// `bands[j][zone]`, applied to `T_z` at the end of interval `j`.
    pub bands: Vec<Vec<Band>>,
}

impl OcpProblem {
    pub fn steps(&self) -> usize {
        self.ambient.len()
    }

    fn validate(&self, model: &ThermalModel) -> Result<()> {
        let n = self.steps();
        if n == 0 || self.occupancy.len() != n || self.bands.len() != n {
            return Err(invalid("problem", "ambient, occupancy and band trajectories must share a non-zero length"));
        }
        if self.x0.len() != model.n_states()
            || self.occupancy.iter().any(|o| o.len() != model.n_zones())
            || self.bands.iter().any(|b| b.len() != model.n_zones())
        {
            return Err(invalid("problem", "zone count mismatch"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// `controls[j][zone]`.
    pub controls: Vec<Vec<ControlInput>>,
    /// Flattened controls `[air, water]` per zone per interval.
    pub flat: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after every accepted iterate, starting with the initial guess.
    pub cost_history: Vec<f64>,
}

impl OcpSolution {
    /// Warm start for the next step: drop the first interval and repeat the last.
    pub fn shifted(&self) -> Vec<f64> {
        let w = self.flat.len() / self.controls.len().max(1);
        let mut v = self.flat[w.min(self.flat.len())..].to_vec();
        let tail = self.flat[self.flat.len().saturating_sub(w)..].to_vec();
        v.extend(tail);
        v
    }
}

struct Evaluator<'a> {
    model: &'a ThermalModel,
    p: &'a OcpProblem,
    cfg: &'a OcpConfig,
    h: f64,
}

impl<'a> Evaluator<'a> {
    fn control_cost(&self, u: &[f64]) -> f64 {
        u.chunks(2).map(|c| self.cfg.r_air * c[0] * c[0] + self.cfg.r_water * c[1] * c[1]).sum::<f64>() * self.cfg.step
    }

    fn stage_penalty(&self, x: &[f64], j: usize) -> f64 {
        let c = self.cfg.penalty_weight * self.cfg.step;
        self.p.bands[j].iter().enumerate().map(|(i, b)| c * penalty(x[3 * i], b.lower, b.upper)).sum()
    }

    /// Cost and, when `trace` is set, the state at the start of every substep.
    fn rollout(&self, u: &[f64], mut trace: Option<&mut Vec<Vec<f64>>>) -> f64 {
        let n = self.model.n_states();
        let w = 2 * self.model.n_zones();
        let mut stages: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut x = self.p.x0.clone();
        let mut next = vec![0.0; n];
        let mut cost = self.control_cost(u);
        for j in 0..self.p.steps() {
            let uj = &u[j * w..(j + 1) * w];
            for _ in 0..self.cfg.substeps {
                if let Some(t) = trace.as_deref_mut() {
                    t.push(x.clone());
                }
                self.model.rk4(&x, uj, self.p.ambient[j], &self.p.occupancy[j], self.h, &mut stages, &mut k, &mut next);
                std::mem::swap(&mut x, &mut next);
            }
            cost += self.stage_penalty(&x, j);
        }
        if let Some(t) = trace {
            t.push(x);
        }
        cost
    }

    fn cost(&self, u: &[f64]) -> f64 {
        self.rollout(u, None)
    }

    /// Cost and its exact gradient through the discrete RK4 recursion.
    fn cost_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let n = self.model.n_states();
        let w = 2 * self.model.n_zones();
        let s = self.cfg.substeps;
        let mut trace = Vec::with_capacity(self.p.steps() * s + 1);
        let cost = self.rollout(u, Some(&mut trace));
        let mut grad: Vec<f64> = u
            .chunks(2)
            .flat_map(|c| [2.0 * self.cfg.r_air * c[0] * self.cfg.step, 2.0 * self.cfg.r_water * c[1] * self.cfg.step])
            .collect();
        let mut lam = vec![0.0; n];
        let mut stages: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut scratch = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut xbar = vec![0.0; n];
        let h = self.h;
        let c = self.cfg.penalty_weight * self.cfg.step;
        for j in (0..self.p.steps()).rev() {
            let xe = &trace[(j + 1) * s];
            for (i, b) in self.p.bands[j].iter().enumerate() {
                lam[3 * i] += c * penalty_derivative(xe[3 * i], b.lower, b.upper);
            }
            let uj = &u[j * w..(j + 1) * w];
            let (ta, occ) = (self.p.ambient[j], &self.p.occupancy[j]);
            let gj = &mut grad[j * w..(j + 1) * w];
            for sub in (0..s).rev() {
                let x = &trace[j * s + sub];
                self.model.rk4(x, uj, ta, occ, h, &mut stages, &mut k, &mut scratch);
                // Stage 4.
                for i in 0..n {
                    a[i] = h / 6.0 * lam[i];
                }
                xbar.iter_mut().for_each(|v| *v = 0.0);
                self.model.vjp(&stages[3], uj, &a, &mut xbar, gj);
                let mut total = xbar.clone();
                // Stage 3.
                for i in 0..n {
                    a[i] = h / 3.0 * lam[i] + h * xbar[i];
                }
                xbar.iter_mut().for_each(|v| *v = 0.0);
                self.model.vjp(&stages[2], uj, &a, &mut xbar, gj);
                total.iter_mut().zip(&xbar).for_each(|(t, v)| *t += v);
                // Stage 2.
                for i in 0..n {
                    a[i] = h / 3.0 * lam[i] + 0.5 * h * xbar[i];
                }
                xbar.iter_mut().for_each(|v| *v = 0.0);
                self.model.vjp(&stages[1], uj, &a, &mut xbar, gj);
                total.iter_mut().zip(&xbar).for_each(|(t, v)| *t += v);
                // Stage 1.
                for i in 0..n {
                    a[i] = h / 6.0 * lam[i] + 0.5 * h * xbar[i];
                }
                xbar.iter_mut().for_each(|v| *v = 0.0);
                self.model.vjp(&stages[0], uj, &a, &mut xbar, gj);
                total.iter_mut().zip(&xbar).for_each(|(t, v)| *t += v);
                for i in 0..n {
                    lam[i] += total[i];
                }
            }
        }
        (cost, grad)
    }
}

fn bounds(cfg: &OcpConfig, len: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = (0..len).map(|i| if i % 2 == 0 { cfg.u_min.air } else { cfg.u_min.water }).collect();
    let hi = (0..len).map(|i| if i % 2 == 0 { cfg.u_max.air } else { cfg.u_max.water }).collect();
    (lo, hi)
}

/// Cost and adjoint gradient of the OCP at controls `u` (flattened).
pub fn cost_and_gradient(model: &ThermalModel, problem: &OcpProblem, cfg: &OcpConfig, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    problem.validate(model)?;
    let ev = Evaluator { model, p: problem, cfg, h: cfg.step * SECONDS_PER_HOUR / cfg.substeps.max(1) as f64 };
    Ok(ev.cost_and_gradient(u))
}

/// Cost of the OCP at controls `u` (flattened).
pub fn cost(model: &ThermalModel, problem: &OcpProblem, cfg: &OcpConfig, u: &[f64]) -> Result<f64> {
    problem.validate(model)?;
    let ev = Evaluator { model, p: problem, cfg, h: cfg.step * SECONDS_PER_HOUR / cfg.substeps.max(1) as f64 };
    Ok(ev.cost(u))
}

/// Projected gradient descent on the box `[u_min, u_max]`, in coordinates
/// scaled by `u_max`, with Armijo backtracking and Barzilai–Borwein trial steps.
pub fn solve_ocp(model: &ThermalModel, problem: &OcpProblem, cfg: &OcpConfig, warm_start: Option<&[f64]>) -> Result<OcpSolution> {
    cfg.validate()?;
    problem.validate(model)?;
    let ev = Evaluator { model, p: problem, cfg, h: cfg.step * SECONDS_PER_HOUR / cfg.substeps.max(1) as f64 };
    let len = problem.steps() * 2 * model.n_zones();
    let (lo, hi) = bounds(cfg, len);
    let scale: Vec<f64> = hi.iter().map(|h| if *h > 0.0 { *h } else { 1.0 }).collect();
    let project = |v: &mut [f64]| {
        for i in 0..v.len() {
            v[i] = v[i].clamp(lo[i] / scale[i], hi[i] / scale[i]);
        }
    };
    let to_u = |v: &[f64]| v.iter().zip(&scale).map(|(a, s)| a * s).collect::<Vec<f64>>();

    let mut v: Vec<f64> = match warm_start {
        Some(w) if w.len() == len => w.iter().zip(&scale).map(|(a, s)| a / s).collect(),
        _ => lo.iter().zip(&scale).map(|(a, s)| a / s).collect(),
    };
    project(&mut v);
    let (mut j, gu) = ev.cost_and_gradient(&to_u(&v));
    if !j.is_finite() {
        return Err(Error::Numeric("non-finite OCP cost".into()));
    }
    let mut g: Vec<f64> = gu.iter().zip(&scale).map(|(a, s)| a * s).collect();
    let mut history = vec![j];
    let mut alpha = {
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if gmax > 0.0 { 0.1 / gmax } else { 1.0 }
    };
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..=cfg.max_backtracks {
            let mut cand: Vec<f64> = v.iter().zip(&g).map(|(x, d)| x - a * d).collect();
            project(&mut cand);
            let decrease: f64 = g.iter().zip(cand.iter().zip(&v)).map(|(d, (c, x))| d * (c - x)).sum();
            if decrease >= 0.0 {
                // Projected gradient vanishes: stationary on the box.
                break;
            }
            let jc = ev.cost(&to_u(&cand));
            if jc.is_finite() && jc <= j + cfg.armijo * decrease {
                accepted = Some((cand, jc));
                break;
            }
            a *= cfg.backtrack;
        }
        let Some((cand, jc)) = accepted else { break };
        let (jn, gun) = ev.cost_and_gradient(&to_u(&cand));
        debug_assert!((jn - jc).abs() <= 1e-12 * jc.abs().max(1.0));
        let gn: Vec<f64> = gun.iter().zip(&scale).map(|(x, s)| x * s).collect();
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..len {
            let s = cand[i] - v[i];
            ss += s * s;
            sy += s * (gn[i] - g[i]);
        }
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { a * 2.0 };
        let rel = (j - jn) / j.abs().max(1e-300);
        v = cand;
        g = gn;
        j = jn;
        history.push(j);
        if rel < cfg.tolerance {
            break;
        }
    }
    let flat = to_u(&v);
    let w = 2 * model.n_zones();
    let controls = flat
        .chunks(w)
        .map(|c| c.chunks(2).map(|p| ControlInput { air: p[0], water: p[1] }).collect())
        .collect();
    Ok(OcpSolution { controls, flat, cost: j, iterations, cost_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::building::{Coupling, SupplyConditions, ZoneParams};
    use rand::{Rng, SeedableRng};

    fn problem(n: usize, nz: usize, x0: Vec<f64>, ta: f64, occ: f64, band: Band) -> OcpProblem {
        OcpProblem { x0, ambient: vec![ta; n], occupancy: vec![vec![occ; nz]; n], bands: vec![vec![band; nz]; n] }
    }

    #[test]
    fn model_matches_building_derivative() {
        let b = Building::default_three_zone();
        let m = ThermalModel::from_building(&b);
        let states = vec![
            ZoneState { tz: 21.0, tw: 12.0, tr: 35.0, x: 0.0 },
            ZoneState { tz: 19.0, tw: 10.0, tr: 25.0, x: 0.0 },
            ZoneState { tz: 18.0, tw: 11.0, tr: 20.0, x: 0.0 },
        ];
        let u = vec![ControlInput { air: 0.05, water: 0.02 }, ControlInput { air: 0.1, water: 0.0 }, ControlInput { air: 0.02, water: 0.05 }];
        let occ = [3.0, 0.0, 1.0];
        let d = b.derivative(&states, &u, 2.0, &occ);
        let mut out = vec![0.0; 9];
        let uf: Vec<f64> = u.iter().flat_map(|c| [c.air, c.water]).collect();
        m.f(&thermal_vector(&states), &uf, 2.0, &occ, &mut out);
        for i in 0..3 {
            assert!((out[3 * i] - d[i].tz).abs() < 1e-15);
            assert!((out[3 * i + 1] - d[i].tw).abs() < 1e-15);
            assert!((out[3 * i + 2] - d[i].tr).abs() < 1e-15);
        }
    }

    #[test]
    fn idle_problem_needs_no_control() {
        let b = Building { zones: vec![ZoneParams::default()], couplings: vec![], supply: SupplyConditions { air_temp: 22.0, ..Default::default() } };
        let m = ThermalModel::from_building(&b);
        let cfg = OcpConfig { u_min: ControlInput::default(), ..OcpConfig::default() };
        let p = problem(24, 1, vec![22.0; 3], 22.0, 0.0, Band { lower: 21.0, upper: 24.0 });
        let sol = solve_ocp(&m, &p, &cfg, None).unwrap();
        assert!(sol.cost.abs() < 1e-12);
        assert!(sol.flat.iter().all(|u| u.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = Building::default_three_zone();
        let m = ThermalModel::from_building(&b);
        let cfg = OcpConfig::default();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let p = OcpProblem {
            x0: (0..9).map(|_| r.gen_range(15.0..26.0)).collect(),
            ambient: (0..n).map(|_| r.gen_range(-5.0..15.0)).collect(),
            occupancy: (0..n).map(|_| (0..3).map(|_| r.gen_range(0.0..6.0)).collect()).collect(),
            bands: vec![vec![Band { lower: 21.0, upper: 24.0 }; 3]; n],
        };
        let u: Vec<f64> = (0..n * 6).map(|i| if i % 2 == 0 { r.gen_range(0.0..0.3) } else { r.gen_range(0.0..0.1) }).collect();
        let (_, g) = cost_and_gradient(&m, &p, &cfg, &u).unwrap();
        let mut fd = vec![0.0; u.len()];
        for i in 0..u.len() {
            let e = 1e-6;
            let mut up = u.clone();
            up[i] += e;
            let mut dn = u.clone();
            dn[i] -= e;
            fd[i] = (cost(&m, &p, &cfg, &up).unwrap() - cost(&m, &p, &cfg, &dn).unwrap()) / (2.0 * e);
        }
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let norm = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err / norm < 1e-4, "relative error {}", err / norm);
    }

    #[test]
    fn cost_never_increases_and_controls_stay_in_box() {
        let b = Building::default_three_zone();
        let m = ThermalModel::from_building(&b);
        let cfg = OcpConfig::default();
        let p = problem(24, 3, vec![18.0, 10.0, 18.0, 19.0, 10.0, 19.0, 18.0, 10.0, 18.0], 0.0, 0.0, Band { lower: 21.0, upper: 24.0 });
        let sol = solve_ocp(&m, &p, &cfg, None).unwrap();
        assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.cost < sol.cost_history[0]);
        for step in &sol.controls {
            for c in step {
                assert!(c.air >= cfg.u_min.air && c.air <= cfg.u_max.air);
                assert!(c.water >= cfg.u_min.water && c.water <= cfg.u_max.water);
            }
        }
    }

    #[test]
    fn shift_drops_first_interval() {
        let sol = OcpSolution {
            controls: vec![vec![ControlInput::default()]; 3],
            flat: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            cost: 0.0,
            iterations: 0,
            cost_history: vec![],
        };
        assert_eq!(sol.shifted(), vec![3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn coupling_gradient_is_symmetric_in_zone_order() {
        let zones = vec![ZoneParams::default(), ZoneParams { cap_zone: 2e6, ..ZoneParams::default() }];
        let b = Building { zones, couplings: vec![Coupling { a: 0, b: 1, r: 0.02 }], supply: SupplyConditions::default() };
        let rev = Building { couplings: vec![Coupling { a: 1, b: 0, r: 0.02 }], ..b.clone() };
        let p = problem(4, 2, vec![20.0, 12.0, 30.0, 23.0, 12.0, 25.0], 3.0, 1.0, Band { lower: 21.0, upper: 24.0 });
        let u = vec![0.05, 0.02, 0.1, 0.03, 0.05, 0.02, 0.1, 0.03, 0.05, 0.02, 0.1, 0.03, 0.05, 0.02, 0.1, 0.03];
        let cfg = OcpConfig::default();
        let (ca, ga) = cost_and_gradient(&ThermalModel::from_building(&b), &p, &cfg, &u).unwrap();
        let (cb, gb) = cost_and_gradient(&ThermalModel::from_building(&rev), &p, &cfg, &u).unwrap();
        assert!((ca - cb).abs() < 1e-14);
        assert!(ga.iter().zip(&gb).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}
