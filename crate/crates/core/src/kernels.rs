//! Stationary covariance functions and their linear stochastic state-space
//! realizations.
//!
//! Matérn kernels with half-integer smoothness `ν = p + 1/2` have a rational
//! spectral density and convert exactly into a companion-form SDE of order
//! `p + 1`. The periodic kernel is a sum of infinitely many undamped
//! resonators; it is truncated after `J` harmonics. A quasi-periodic kernel is
//! the product of the two and is realized through a Kronecker sum of the
//! component drift matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{expm, frobenius, kron, solve_lyapunov};

/// Matérn kernel with smoothness `ν = p + 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternKernel {
    pub p: u32,
    pub sigma2: f64,
    /// Length scale in hours.
    pub ell: f64,
}

/// Periodic kernel `σ² exp(-2 sin²(ω₀τ/2) / ℓ²)` truncated to `order` harmonics
/// when converted to state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicKernel {
    pub sigma2: f64,
    /// Unitless length scale.
    pub ell: f64,
    /// Fundamental angular frequency in rad/hour.
    pub omega0: f64,
    /// Number of harmonics `J` kept by the state-space approximation.
    pub order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Matern(MaternKernel),
    Periodic(PeriodicKernel),
    QuasiPeriodic { periodic: PeriodicKernel, damping: MaternKernel },
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {v}")))
    }
}

impl MaternKernel {
    pub fn new(p: u32, sigma2: f64, ell: f64) -> Result<Self> {
        let k = Self { p, sigma2, ell };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("sigma2", self.sigma2)?;
        check_positive("ell", self.ell)
    }

    /// Closed-form half-integer Matérn covariance.
    pub fn eval(&self, tau: f64) -> f64 {
        let p = self.p as i32;
        let nu = self.p as f64 + 0.5;
        let r = tau.abs();
        let scaled = (2.0 * nu).sqrt() * r / self.ell;
        // Γ(p+1)/Γ(2p+1) Σ_i (p+i)!/(i!(p-i)!) (2·scaled)^(p-i)
        let mut sum = 0.0;
        for i in 0..=p {
            let coeff = factorial(p + i) / (factorial(i) * factorial(p - i));
            sum += coeff * (2.0 * scaled).powi(p - i);
        }
        self.sigma2 * (-scaled).exp() * factorial(p) / factorial(2 * p) * sum
    }

    /// Exact state-space realization of order `p + 1`.
    pub fn to_state_space(&self) -> Result<LtiSde> {
        matern_to_ss(self.p, self.sigma2, self.ell)
    }
}

impl PeriodicKernel {
    pub fn new(sigma2: f64, ell: f64, omega0: f64, order: usize) -> Result<Self> {
        let k = Self { sigma2, ell, omega0, order };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("sigma2", self.sigma2)?;
        check_positive("ell", self.ell)?;
        check_positive("omega0", self.omega0)?;
        if self.order == 0 {
            return Err(invalid("order", "approximation degree J must be >= 1"));
        }
        Ok(())
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let s = (0.5 * self.omega0 * tau).sin();
        self.sigma2 * (-2.0 * s * s / (self.ell * self.ell)).exp()
    }

    pub fn to_state_space(&self) -> Result<LtiSde> {
        periodic_to_ss(self.sigma2, self.ell, self.omega0, self.order)
    }
}

impl KernelSpec {
    /// Builds a quasi-periodic spec. The damping magnitude is fixed to 1 so the
    /// product magnitude is carried by the periodic factor alone.
    pub fn quasi_periodic(periodic: PeriodicKernel, damping: MaternKernel) -> Result<Self> {
        let spec = KernelSpec::QuasiPeriodic {
            periodic,
            damping: MaternKernel { sigma2: 1.0, ..damping },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Matern(m) => m.validate(),
            KernelSpec::Periodic(p) => p.validate(),
            KernelSpec::QuasiPeriodic { periodic, damping } => {
                periodic.validate()?;
                damping.validate()?;
                if damping.sigma2 != 1.0 {
                    return Err(invalid(
                        "damping.sigma2",
                        "quasi-periodic damping magnitude must be 1",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Magnitude `k(0)`.
    pub fn variance(&self) -> f64 {
        match self {
            KernelSpec::Matern(m) => m.sigma2,
            KernelSpec::Periodic(p) => p.sigma2,
            KernelSpec::QuasiPeriodic { periodic, damping } => periodic.sigma2 * damping.sigma2,
        }
    }

    pub fn to_state_space(&self) -> Result<LtiSde> {
        self.validate()?;
        match self {
            KernelSpec::Matern(m) => m.to_state_space(),
            KernelSpec::Periodic(p) => p.to_state_space(),
            KernelSpec::QuasiPeriodic { periodic, damping } => {
                product_to_ss(&periodic.to_state_space()?, &damping.to_state_space()?)
            }
        }
    }
}

/// Evaluates `k(τ)` for a stationary kernel in lag form.
pub fn kernel_eval(spec: &KernelSpec, tau: f64) -> Result<f64> {
    spec.validate()?;
    Ok(match spec {
        KernelSpec::Matern(m) => m.eval(tau),
        KernelSpec::Periodic(p) => p.eval(tau),
        KernelSpec::QuasiPeriodic { periodic, damping } => periodic.eval(tau) * damping.eval(tau),
    })
}

fn factorial(n: i32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Continuous-time linear time-invariant SDE
/// `dz = F z dt + L dβ`, `d = H z`, with white-noise spectral density `q`
/// and stationary covariance `pinf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSde {
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub pinf: DMatrix<f64>,
    /// True when every eigenvalue of `f` has a strictly negative real part.
    pub strictly_stable: bool,
}

impl LtiSde {
    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    /// Frobenius norm of `F Pinf + Pinf Fᵀ + L q Lᵀ`.
    pub fn lyapunov_residual(&self) -> f64 {
        let r = &self.f * &self.pinf + &self.pinf * self.f.transpose() + self.noise_covariance();
        frobenius(&r)
    }

    /// `L q Lᵀ`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        &self.l * &self.q * self.l.transpose()
    }

    /// Output covariance `H expm(F|τ|) Pinf Hᵀ`.
    pub fn reconstruct_kernel(&self, tau: f64) -> Result<f64> {
        let phi = expm(&(&self.f * tau.abs()))?;
        Ok((&self.h * phi * &self.pinf * self.h.transpose())[(0, 0)])
    }
}

pub fn reconstruct_kernel(model: &LtiSde, tau: f64) -> Result<f64> {
    model.reconstruct_kernel(tau)
}

/// Companion-form realization of the Matérn kernel with `ν = p + 1/2`.
pub fn matern_to_ss(p: u32, sigma2: f64, ell: f64) -> Result<LtiSde> {
    MaternKernel { p, sigma2, ell }.validate()?;
    let n = p as usize + 1;
    let lambda = (2.0 * p as f64 + 1.0).sqrt() / ell;

    let mut f = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        f[(i, i + 1)] = 1.0;
    }
    // Characteristic polynomial (s + λ)^n.
    for k in 0..n {
        let binom = factorial(n as i32) / (factorial(k as i32) * factorial((n - k) as i32));
        f[(n - 1, k)] = -binom * lambda.powi((n - k) as i32);
    }
    let mut l = DMatrix::zeros(n, 1);
    l[(n - 1, 0)] = 1.0;
    let mut h = DMatrix::zeros(1, n);
    h[(0, 0)] = 1.0;

    let pi = p as i32;
    let qc = 2.0 * sigma2 * lambda.powi(2 * pi + 1) * factorial(pi).powi(2) * 4f64.powi(pi)
        / factorial(2 * pi);
    let q = DMatrix::from_element(1, 1, qc);
    let pinf = solve_lyapunov(&f, &(&l * &q * l.transpose()))?;
    Ok(LtiSde { f, l, h, q, pinf, strictly_stable: true })
}

/// `ln(I_j(x) e^{-x})` from the power series, summed in log space.
pub(crate) fn ln_scaled_bessel_i(j: usize, x: f64) -> f64 {
    let ln_half_x = (0.5 * x).ln();
    let ln_j_fact: f64 = (1..=j).map(|k| (k as f64).ln()).sum();
    let mut ln_term = j as f64 * ln_half_x - ln_j_fact - x;
    let mut ln_sum = ln_term;
    let mut k = 0usize;
    loop {
        k += 1;
        ln_term += 2.0 * ln_half_x - (k as f64).ln() - ((k + j) as f64).ln();
        let hi = ln_sum.max(ln_term);
        ln_sum = hi + ((ln_sum - hi).exp() + (ln_term - hi).exp()).ln();
        // Terms decrease once k(k+j) exceeds (x/2)²; stop on relative size.
        let decreasing = (k * (k + j)) as f64 > 0.25 * x * x;
        if decreasing && ln_term - ln_sum < (1e-16f64).ln() {
            break;
        }
        if k > 100_000 {
            break;
        }
    }
    ln_sum
}

/// Variances of the `J + 1` resonators, normalized to sum to `sigma2`.
pub fn resonator_variances(sigma2: f64, ell: f64, order: usize) -> Vec<f64> {
    let x = 1.0 / (ell * ell);
    let mut w: Vec<f64> = (0..=order)
        .map(|j| {
            let base = ln_scaled_bessel_i(j, x).exp();
            if j == 0 {
                base
            } else {
                2.0 * base
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v *= sigma2 / total;
    }
    w
}

/// Truncated resonator realization of the periodic kernel: `J + 1` undamped
/// 2×2 oscillators at harmonics `jω₀`, driven by no noise.
pub fn periodic_to_ss(sigma2: f64, ell: f64, omega0: f64, order: usize) -> Result<LtiSde> {
    PeriodicKernel { sigma2, ell, omega0, order }.validate()?;
    let n = 2 * (order + 1);
    let variances = resonator_variances(sigma2, ell, order);
    let mut f = DMatrix::zeros(n, n);
    let mut pinf = DMatrix::zeros(n, n);
    let mut h = DMatrix::zeros(1, n);
    for (j, var) in variances.iter().enumerate() {
        let w = j as f64 * omega0;
        let b = 2 * j;
        f[(b, b + 1)] = -w;
        f[(b + 1, b)] = w;
        pinf[(b, b)] = *var;
        pinf[(b + 1, b + 1)] = *var;
        h[(0, b)] = 1.0;
    }
    Ok(LtiSde {
        f,
        l: DMatrix::identity(n, n),
        h,
        q: DMatrix::zeros(n, n),
        pinf,
        strictly_stable: false,
    })
}

/// Product of a noise-free periodic model and a damping model.
pub fn product_to_ss(periodic: &LtiSde, damping: &LtiSde) -> Result<LtiSde> {
    let np = periodic.dim();
    let nq = damping.dim();
    let ip = DMatrix::<f64>::identity(np, np);
    let iq = DMatrix::<f64>::identity(nq, nq);
    let f = kron(&periodic.f, &iq) + kron(&ip, &damping.f);
    let l = kron(&ip, &damping.l);
    let q = kron(&periodic.pinf, &damping.q);
    let h = kron(&periodic.h, &damping.h);
    let pinf = kron(&periodic.pinf, &damping.pinf);
    Ok(LtiSde { f, l, h, q, pinf, strictly_stable: damping.strictly_stable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn day() -> f64 {
        2.0 * PI / 24.0
    }

    #[test]
    fn matern_at_zero_lag_is_magnitude() {
        let spec = KernelSpec::Matern(MaternKernel::new(0, 1.0, 2.0).unwrap());
        assert_eq!(kernel_eval(&spec, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn periodic_is_exactly_periodic() {
        let spec = KernelSpec::Periodic(PeriodicKernel::new(1.0, 1.0, day(), 10).unwrap());
        assert_relative_eq!(kernel_eval(&spec, 24.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn matern_half_closed_form() {
        let spec = KernelSpec::Matern(MaternKernel::new(0, 1.0, 2.0).unwrap());
        assert_relative_eq!(kernel_eval(&spec, 2.0).unwrap(), (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn matern_three_halves_closed_form() {
        let m = MaternKernel::new(1, 1.3, 0.7).unwrap();
        let r = 0.9;
        let s = 3f64.sqrt() * r / 0.7;
        assert_relative_eq!(m.eval(r), 1.3 * (1.0 + s) * (-s).exp(), epsilon = 1e-14);
        assert_relative_eq!(m.eval(-r), m.eval(r));
    }

    #[test]
    fn matern_five_halves_closed_form() {
        let m = MaternKernel::new(2, 2.0, 1.5).unwrap();
        let r = 1.1;
        let s = 5f64.sqrt() * r / 1.5;
        let expected = 2.0 * (1.0 + s + s * s / 3.0) * (-s).exp();
        assert_relative_eq!(m.eval(r), expected, epsilon = 1e-14);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(MaternKernel::new(0, -1.0, 1.0).is_err());
        assert!(MaternKernel::new(0, 1.0, 0.0).is_err());
        assert!(PeriodicKernel::new(1.0, 1.0, 0.0, 3).is_err());
        assert!(PeriodicKernel::new(1.0, 1.0, 1.0, 0).is_err());
        let bad = KernelSpec::Matern(MaternKernel { p: 0, sigma2: f64::NAN, ell: 1.0 });
        assert!(kernel_eval(&bad, 0.0).is_err());
    }

    #[test]
    fn matern_half_state_space() {
        let m = matern_to_ss(0, 1.0, 2.0).unwrap();
        assert_eq!(m.f[(0, 0)], -0.5);
        assert_eq!(m.l[(0, 0)], 1.0);
        assert_eq!(m.h[(0, 0)], 1.0);
        assert_relative_eq!(m.q[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.pinf[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn matern_three_halves_companion() {
        let m = matern_to_ss(1, 1.0, 1.0).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.f[(0, 0)], 0.0);
        assert_eq!(m.f[(0, 1)], 1.0);
        assert_relative_eq!(m.f[(1, 0)], -3.0, epsilon = 1e-14);
        assert_relative_eq!(m.f[(1, 1)], -2.0 * 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn bessel_series_matches_reference_values() {
        // I_0(1) = 1.2660658777520082, I_1(1) = 0.5651591039924851, I_3(2.5) = 0.4743704087780359
        assert_relative_eq!(ln_scaled_bessel_i(0, 1.0).exp() * 1f64.exp(), 1.2660658777520082, max_relative = 1e-14);
        assert_relative_eq!(ln_scaled_bessel_i(1, 1.0).exp() * 1f64.exp(), 0.5651591039924851, max_relative = 1e-14);
        assert_relative_eq!(ln_scaled_bessel_i(3, 2.5).exp() * 2.5f64.exp(), 0.4743704087780359, max_relative = 1e-13);
    }

    #[test]
    fn bessel_series_survives_large_arguments() {
        // exp(-x) I_0(x) ~ 1/sqrt(2πx) for large x.
        let x = 2000.0;
        let v = ln_scaled_bessel_i(0, x).exp();
        assert_relative_eq!(v, 1.0 / (2.0 * PI * x).sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn periodic_dimension_and_structure() {
        let m = periodic_to_ss(1.0, 1.0, day(), 10).unwrap();
        assert_eq!(m.dim(), 22);
        assert!(m.q.iter().all(|v| *v == 0.0));
        assert_relative_eq!((&m.h * &m.pinf * m.h.transpose())[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.f[(5, 4)], 2.0 * day(), epsilon = 1e-15);
        assert_relative_eq!(m.f[(4, 5)], -2.0 * day(), epsilon = 1e-15);
    }

    #[test]
    fn quasi_periodic_forces_unit_damping_magnitude() {
        let spec = KernelSpec::quasi_periodic(
            PeriodicKernel::new(3.0, 1.0, day(), 10).unwrap(),
            MaternKernel::new(0, 7.0, 50.0).unwrap(),
        )
        .unwrap();
        assert_eq!(spec.variance(), 3.0);
        assert_eq!(spec.to_state_space().unwrap().dim(), 22);
    }

    #[test]
    fn reconstruct_at_zero_is_output_variance() {
        let m = matern_to_ss(2, 1.7, 0.8).unwrap();
        let at_zero = m.reconstruct_kernel(0.0).unwrap();
        assert_relative_eq!(at_zero, (&m.h * &m.pinf * m.h.transpose())[(0, 0)], epsilon = 1e-15);
    }

    #[test]
    fn quasi_periodic_decays_over_a_day() {
        let spec = KernelSpec::quasi_periodic(
            PeriodicKernel::new(1.0, 1.0, day(), 10).unwrap(),
            MaternKernel::new(0, 1.0, 24.0).unwrap(),
        )
        .unwrap();
        let m = spec.to_state_space().unwrap();
        assert!(m.reconstruct_kernel(24.0).unwrap() < m.reconstruct_kernel(0.0).unwrap());
    }
}
