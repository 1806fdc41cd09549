//! Discrete-time inference on latent Gaussian state-space models.
//!
//! A stationary GP with a state-space realization is discretized onto a
//! regular grid; Kalman filtering followed by Rauch–Tung–Striebel smoothing
//! then reproduces exact GP regression marginals in `O(n_z³ n)` time.

mod filter;
mod fit;
mod gp;

pub use filter::{kf_filter, nlml, riccati_step, rts_smooth, stationary_gain, FilterOutput, SmootherOutput, StationaryFilter};
pub use fit::{fit_hyperparameters, FitResult};
pub(crate) use filter::update as filter_update;
pub use gp::{gp_regress, nlml_dense, GpPosterior};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kernels::LtiSde;
use crate::linalg::{expm, symmetrized};

/// Gaussian belief over a state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn zero_mean(cov: DMatrix<f64>) -> Self {
        Self { mean: DVector::zeros(cov.nrows()), cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One-step transition of a latent model on a grid of step `dt` hours, with a
/// scalar observation `y = H z + v`, `v ~ N(0, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: f64,
    pub dt: f64,
}

impl DiscreteModel {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, h: DMatrix<f64>, r: f64, dt: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || q.shape() != (n, n) || h.shape() != (1, n) {
            return Err(invalid("model", "inconsistent A/Q/H dimensions"));
        }
        if !(r >= 0.0) {
            return Err(invalid("r", "observation noise variance must be >= 0"));
        }
        Ok(Self { a, q, h, r, dt })
    }

    pub fn with_noise(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Mean/covariance propagation by one step without an update.
    pub fn predict(&self, s: &GaussianState) -> GaussianState {
        let mean = &self.a * &s.mean;
        let cov = symmetrized(&self.a * &s.cov * self.a.transpose() + &self.q);
        GaussianState { mean, cov }
    }

    pub fn output(&self, z: &DVector<f64>) -> f64 {
        (&self.h * z)[0]
    }
}

/// Exact discretization of an LTI SDE over a step of `dt` hours.
///
/// `A = expm(F dt)`. The process noise is `Pinf − A Pinf Aᵀ` for strictly
/// stable models and the Van Loan matrix-fraction result otherwise.
pub fn discretize(model: &LtiSde, dt: f64) -> Result<DiscreteModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", format!("step must be > 0, got {dt}")));
    }
    let n = model.dim();
    let a = expm(&(&model.f * dt))?;
    let q = if model.strictly_stable {
        &model.pinf - &a * &model.pinf * a.transpose()
    } else {
        van_loan_noise(model, dt)?
    };
    let q = symmetrized(q);
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite process noise".into()));
    }
    DiscreteModel::new(a, q, model.h.clone(), 0.0, dt).map(|m| {
        debug_assert_eq!(m.dim(), n);
        m
    })
}

/// Process noise covariance from the block matrix exponential of
/// `[[-F, LqLᵀ], [0, Fᵀ]] dt`.
pub fn van_loan_noise(model: &LtiSde, dt: f64) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let w = model.noise_covariance();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-&model.f * dt));
    m.view_mut((0, n), (n, n)).copy_from(&(w * dt));
    m.view_mut((n, n), (n, n)).copy_from(&(model.f.transpose() * dt));
    let e = expm(&m)?;
    let phi = e.view((n, n), (n, n)).transpose();
    let g = e.view((0, n), (n, n)).into_owned();
    Ok(phi * g)
}

/// Scalar time series on (a subset of) a regular grid. Missing values are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<Option<f64>>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<Option<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(invalid("values", "length differs from timestamps"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("times", "timestamps must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    /// Fully observed series on `start + k·step`.
    pub fn regular(start: f64, step: f64, values: &[f64]) -> Self {
        Self {
            times: (0..values.len()).map(|k| start + k as f64 * step).collect(),
            values: values.iter().map(|v| Some(*v)).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observed(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().zip(&self.values).filter_map(|(t, v)| v.map(|v| (*t, v)))
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Smallest spacing between consecutive timestamps.
    pub fn min_spacing(&self) -> Option<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
    }

    /// Grid index of every timestamp relative to the first one.
    pub fn grid_indices(&self, step: f64) -> Result<Vec<usize>> {
        let Some(&t0) = self.times.first() else {
            return Ok(Vec::new());
        };
        self.times
            .iter()
            .map(|&t| {
                let k = (t - t0) / step;
                let r = k.round();
                if (k - r).abs() > 1e-6 * k.abs().max(1.0) {
                    Err(Error::OffGrid { time: t, step })
                } else {
                    Ok(r as usize)
                }
            })
            .collect()
    }
}
