//! Quick oracle and invariant checks run by the `verify` subcommand.

use rand::Rng;

use crate::building::{Building, ControlInput, ZoneState};
use crate::kernels::{kernel_eval, KernelSpec, MaternKernel};
use crate::mpc::ocp::{cost, cost_and_gradient, OcpConfig, OcpProblem, ThermalModel};
use crate::mpc::{violation, Band};
use crate::occupancy::default_template;
use crate::rng;
use crate::ssm::{discretize, gp_regress, kf_filter, riccati_step, rts_smooth, stationary_gain, GaussianState, TimeSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn gp_equivalence(seed: u64) -> crate::error::Result<Check> {
    let mut r = rng::stream(seed, rng::UKF_TEST, 1);
    let mut worst: f64 = 0.0;
    for p in [0, 1] {
        let spec = KernelSpec::Matern(MaternKernel { p, sigma2: 1.3, ell: 2.0 });
        let dt = 0.5;
        let kept: Vec<usize> = (0..120).filter(|_| r.gen_bool(0.6)).collect();
        let times: Vec<f64> = kept.iter().map(|k| *k as f64 * dt).collect();
        let values: Vec<Option<f64>> = kept.iter().map(|_| Some(r.gen_range(-2.0..2.0))).collect();
        let data = TimeSeries::new(times, values)?;
        let sde = spec.to_state_space()?;
        let dm = discretize(&sde, dt)?.with_noise(0.1);
        let filt = kf_filter(&dm, &GaussianState::zero_mean(sde.pinf.clone()), &data)?;
        let smooth = rts_smooth(&dm, &filt)?;
        let gp = gp_regress(&spec, &data, 0.1, &filt.times)?;
        for (k, s) in smooth.states.iter().enumerate() {
            let m = dm.output(&s.mean);
            let v = (&dm.h * &s.cov * dm.h.transpose())[(0, 0)];
            worst = worst.max((m - gp.mean[k]).abs() / gp.mean[k].abs().max(1.0));
            worst = worst.max((v - gp.var[k]).abs() / gp.var[k].abs().max(1e-3));
        }
    }
    Ok(check("gp_ssm_equivalence", worst < 1e-6, format!("max relative error {worst:.2e}")))
}

fn periodic_approximation() -> crate::error::Result<Check> {
    let spec = default_template();
    let sde = spec.to_state_space()?;
    let mut worst: f64 = 0.0;
    for i in 0..=96 {
        let tau = i as f64 * 0.25;
        worst = worst.max((sde.reconstruct_kernel(tau)? - kernel_eval(&spec, tau)?).abs());
    }
    Ok(check(
        "quasi_periodic_j10",
        worst < 1e-3 && sde.dim() == 22,
        format!("{} states, max abs error {worst:.2e}", sde.dim()),
    ))
}

fn riccati_fixed_point() -> crate::error::Result<Check> {
    let sde = default_template().to_state_space()?;
    let dm = discretize(&sde, 0.25)?.with_noise(0.5);
    let st = stationary_gain(&dm)?;
    let next = riccati_step(&dm, &st.predicted_cov);
    let change = (&next - &st.predicted_cov).abs().max();
    Ok(check("riccati_fixed_point", change < 1e-9, format!("one-step change {change:.2e}")))
}

fn equilibrium_preserved() -> crate::error::Result<Check> {
    let b = Building::default_three_zone();
    let u = vec![ControlInput { air: 0.1, water: 0.03 }; 3];
    let occ = [2.0, 1.0, 0.0];
    let ss = b.thermal_steady_state(&u, 5.0, &occ)?;
    let x0: Vec<ZoneState> = ss
        .iter()
        .zip(&occ)
        .map(|(t, o)| {
            let x = b.supply.co2 + b.supply.co2_generation * o / 0.1;
            ZoneState { tz: t[0], tw: t[1], tr: t[2], x }
        })
        .collect();
    let x1 = b.advance(&x0, &u, 5.0, &occ, 1.0, 12);
    let drift = x0.iter().zip(&x1).map(|(a, c)| (a.tz - c.tz).abs().max((a.tw - c.tw).abs()).max((a.tr - c.tr).abs())).fold(0.0, f64::max);
    Ok(check("equilibrium_preserved", drift < 1e-9, format!("drift {drift:.2e} K over 1 h")))
}

fn adjoint_gradient(seed: u64) -> crate::error::Result<Check> {
    let b = Building::default_three_zone();
    let model = ThermalModel::from_building(&b);
    let cfg = OcpConfig { horizon: 1.0, ..OcpConfig::default() };
    let n = cfg.steps();
    let mut r = rng::stream(seed, rng::UKF_TEST, 2);
    let problem = OcpProblem {
        x0: (0..9).map(|_| r.gen_range(16.0..26.0)).collect(),
        ambient: (0..n).map(|_| r.gen_range(-5.0..15.0)).collect(),
        occupancy: (0..n).map(|_| (0..3).map(|_| r.gen_range(0.0..5.0)).collect()).collect(),
        bands: vec![vec![Band { lower: 21.0, upper: 24.0 }; 3]; n],
    };
    let u: Vec<f64> = (0..n * 6).map(|i| if i % 2 == 0 { r.gen_range(0.02..0.3) } else { r.gen_range(0.0..0.1) }).collect();
    let (_, g) = cost_and_gradient(&model, &problem, &cfg, &u)?;
    let mut fd = vec![0.0; u.len()];
    for i in 0..u.len() {
        let h = 1e-6;
        let (mut up, mut dn) = (u.clone(), u.clone());
        up[i] += h;
        dn[i] -= h;
        fd[i] = (cost(&model, &problem, &cfg, &up)? - cost(&model, &problem, &cfg, &dn)?) / (2.0 * h);
    }
    let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    let rel = err / scale;
    Ok(check("adjoint_gradient", rel < 1e-4, format!("relative error {rel:.2e}")))
}

fn discomfort_zero_in_band() -> Check {
    let b = Band { lower: 21.0, upper: 24.0 };
    let ok = violation(22.0, &b) == 0.0 && violation(21.0, &b) == 0.0 && violation(20.5, &b) > 0.0 && violation(24.5, &b) > 0.0;
    check("discomfort_zero_iff_in_band", ok, String::new())
}

fn co2_steady_state() -> Check {
    let b = Building::default_three_zone();
    let (m, n) = (0.08, 4.0);
    let x_ss = b.supply.co2 + b.supply.co2_generation * n / m;
    let mut s = vec![ZoneState::uniform(20.0, b.supply.co2); 3];
    let u = vec![ControlInput { air: m, water: 0.0 }; 3];
    for _ in 0..48 {
        s = b.advance(&s, &u, 20.0, &[n, n, n], 0.5, 30);
    }
    let rel = (s[0].x - x_ss).abs() / x_ss;
    check("co2_steady_state", rel < 1e-3, format!("relative error {rel:.2e}"))
}

/// Runs every check; the `seed` only draws the random instances.
pub fn run_checks(seed: u64) -> Vec<Check> {
    let fallible: Vec<(&'static str, crate::error::Result<Check>)> = vec![
        ("gp_ssm_equivalence", gp_equivalence(seed)),
        ("quasi_periodic_j10", periodic_approximation()),
        ("riccati_fixed_point", riccati_fixed_point()),
        ("equilibrium_preserved", equilibrium_preserved()),
        ("adjoint_gradient", adjoint_gradient(seed)),
    ];
    let mut out: Vec<Check> = fallible
        .into_iter()
        .map(|(name, r)| r.unwrap_or_else(|e| check(name, false, e.to_string())))
        .collect();
    out.push(discomfort_zero_in_band());
    out.push(co2_steady_state());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_checks(7) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
