use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use log::warn;

use super::{nlml, TimeSeries};
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, MaternKernel, PeriodicKernel};

const MAX_ITERS: u64 = 500;
// Box on every log-parameter; keeps the resonator weights and the filter sane.
const LOG_LO: f64 = -9.2; // ~1e-4
const LOG_HI: f64 = 9.2; // ~1e4

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: KernelSpec,
    pub noise_var: f64,
    pub nlml: f64,
    pub initial_nlml: f64,
    pub iterations: u64,
    /// Set when the optimizer stopped on the iteration cap.
    pub hit_iteration_cap: bool,
}

fn pack(spec: &KernelSpec, noise_var: f64) -> Vec<f64> {
    let mut v = match spec {
        KernelSpec::Matern(m) => vec![m.sigma2.ln(), m.ell.ln()],
        KernelSpec::Periodic(p) => vec![p.sigma2.ln(), p.ell.ln()],
        KernelSpec::QuasiPeriodic { periodic, damping } => {
            vec![periodic.sigma2.ln(), periodic.ell.ln(), damping.ell.ln()]
        }
    };
    v.push(noise_var.ln());
    v
}

fn unpack(template: &KernelSpec, x: &[f64]) -> (KernelSpec, f64) {
    let spec = match template {
        KernelSpec::Matern(m) => KernelSpec::Matern(MaternKernel { sigma2: x[0].exp(), ell: x[1].exp(), ..*m }),
        KernelSpec::Periodic(p) => KernelSpec::Periodic(PeriodicKernel { sigma2: x[0].exp(), ell: x[1].exp(), ..*p }),
        KernelSpec::QuasiPeriodic { periodic, damping } => KernelSpec::QuasiPeriodic {
            periodic: PeriodicKernel { sigma2: x[0].exp(), ell: x[1].exp(), ..*periodic },
            damping: MaternKernel { ell: x[2].exp(), ..*damping },
        },
    };
    (spec, x[x.len() - 1].exp())
}

struct Objective<'a> {
    template: KernelSpec,
    data: &'a TimeSeries,
}

impl Objective<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| !(LOG_LO..=LOG_HI).contains(v)) {
            return f64::MAX;
        }
        let (spec, noise) = unpack(&self.template, x);
        match nlml(&spec, self.data, noise) {
            Ok(v) if v.is_finite() => v,
            _ => f64::MAX,
        }
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(x))
    }
}

/// Nelder–Mead minimization of the filter NLML over the log magnitude, log
/// length scale(s) and log noise variance. Frequency and truncation order
/// are held fixed.
pub fn fit_hyperparameters(spec: &KernelSpec, data: &TimeSeries, noise_var: f64) -> Result<FitResult> {
    spec.validate()?;
    let initial_nlml = nlml(spec, data, noise_var)?;
    let objective = Objective { template: *spec, data };
    let x0 = pack(spec, noise_var);
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += 0.5;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-7)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let res = Executor::new(objective, solver)
        .configure(|s| s.max_iters(MAX_ITERS))
        .run()
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let state = res.state();
    let hit_cap = matches!(
        state.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::MaxItersReached)
    );
    if hit_cap {
        warn!("hyperparameter fit stopped at {MAX_ITERS} iterations; returning best so far");
    }
    let iterations = state.get_iter();
    let best = state.get_best_param().cloned().unwrap_or(x0);
    let best_cost = state.get_best_cost();
    let (fitted, noise) = unpack(spec, &best);
    if best_cost <= initial_nlml && best_cost.is_finite() {
        Ok(FitResult { spec: fitted, noise_var: noise, nlml: best_cost, initial_nlml, iterations, hit_iteration_cap: hit_cap })
    } else {
        Ok(FitResult { spec: *spec, noise_var, nlml: initial_nlml, initial_nlml, iterations, hit_iteration_cap: hit_cap })
    }
}
