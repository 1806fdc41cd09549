use nalgebra::{DMatrix, DVector};

use super::{discretize, DiscreteModel, GaussianState, TimeSeries};
use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{frobenius, symmetrize, symmetrized};

const LN_2PI: f64 = 1.8378770664093453;

/// Result of a forward Kalman pass over every grid step between the first
/// and last timestamp of the data.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub times: Vec<f64>,
    pub observations: Vec<Option<f64>>,
    /// Predicted belief at each grid step (the prior at step 0).
    pub predicted: Vec<GaussianState>,
    pub filtered: Vec<GaussianState>,
    /// Gaussian predictive log-density of each observation, 0 when missing.
    pub log_likelihood: Vec<f64>,
}

impl FilterOutput {
    pub fn total_log_likelihood(&self) -> f64 {
        self.log_likelihood.iter().sum()
    }

    pub fn last(&self) -> Option<&GaussianState> {
        self.filtered.last()
    }

    /// Grid index of time `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let t0 = *self.times.first()?;
        let dt = if self.times.len() > 1 { self.times[1] - t0 } else { 1.0 };
        let k = ((t - t0) / dt).round();
        (k >= 0.0 && (k as usize) < self.times.len()).then_some(k as usize)
    }
}

/// Joseph-form measurement update. Returns the posterior and the predictive
/// log-density of `y`.
pub(crate) fn update(
    dm: &DiscreteModel,
    pred: &GaussianState,
    y: f64,
) -> Result<(GaussianState, f64)> {
    let ph = &pred.cov * dm.h.transpose();
    let s = (&dm.h * &ph)[(0, 0)] + dm.r;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Numeric(format!("innovation variance {s} is not positive")));
    }
    let v = y - dm.output(&pred.mean);
    let k: DVector<f64> = ph.column(0) / s;
    let mean = &pred.mean + &k * v;
    let n = pred.dim();
    let ikh = DMatrix::<f64>::identity(n, n) - &k * &dm.h;
    let mut cov = &ikh * &pred.cov * ikh.transpose() + &k * k.transpose() * dm.r;
    symmetrize(&mut cov);
    let ll = -0.5 * (LN_2PI + s.ln() + v * v / s);
    Ok((GaussianState { mean, cov }, ll))
}

/// Kalman filter over a gridded series. `prior` is the belief at the first
/// timestamp before its observation is used; missing samples and grid gaps
/// are handled as predict-only steps.
pub fn kf_filter(dm: &DiscreteModel, prior: &GaussianState, data: &TimeSeries) -> Result<FilterOutput> {
    if prior.dim() != dm.dim() {
        return Err(invalid("prior", "dimension does not match the model"));
    }
    let idx = data.grid_indices(dm.dt)?;
    let steps = idx.last().map_or(0, |k| k + 1);
    let t0 = data.times().first().copied().unwrap_or(0.0);
    let mut obs = vec![None; steps];
    for (k, v) in idx.iter().zip(data.values()) {
        obs[*k] = *v;
    }

    let mut out = FilterOutput {
        times: (0..steps).map(|k| t0 + k as f64 * dm.dt).collect(),
        observations: obs,
        predicted: Vec::with_capacity(steps),
        filtered: Vec::with_capacity(steps),
        log_likelihood: Vec::with_capacity(steps),
    };
    let mut pred = prior.clone();
    for k in 0..steps {
        let (post, ll) = match out.observations[k] {
            Some(y) => update(dm, &pred, y)?,
            None => (pred.clone(), 0.0),
        };
        out.predicted.push(pred);
        pred = dm.predict(&post);
        out.filtered.push(post);
        out.log_likelihood.push(ll);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub states: Vec<GaussianState>,
    /// Set when a predicted covariance had to be regularized with jitter.
    pub regularized: bool,
}

/// Rauch–Tung–Striebel backward pass.
pub fn rts_smooth(dm: &DiscreteModel, filtered: &FilterOutput) -> Result<SmootherOutput> {
    let n = filtered.filtered.len();
    let mut states = filtered.filtered.clone();
    let mut regularized = false;
    if n < 2 {
        return Ok(SmootherOutput { states, regularized });
    }
    let dim = dm.dim();
    for k in (0..n - 1).rev() {
        let f = &filtered.filtered[k];
        let p = &filtered.predicted[k + 1];
        let apf = &dm.a * &f.cov;
        // G = Pf Aᵀ Ppred⁻¹, solved as Ppred Gᵀ = A Pf.
        let gt = match p.cov.clone().cholesky() {
            Some(c) => c.solve(&apf),
            None => {
                regularized = true;
                let jittered = &p.cov + DMatrix::<f64>::identity(dim, dim) * 1e-10;
                jittered
                    .lu()
                    .solve(&apf)
                    .ok_or_else(|| Error::Numeric("singular predicted covariance".into()))?
            }
        };
        let g = gt.transpose();
        let next = &states[k + 1];
        let mean = &f.mean + &g * (&next.mean - &p.mean);
        let cov = symmetrized(&f.cov + &g * (&next.cov - &p.cov) * g.transpose());
        states[k] = GaussianState { mean, cov };
    }
    Ok(SmootherOutput { states, regularized })
}

/// Converged steady-state filter.
#[derive(Debug, Clone)]
pub struct StationaryFilter {
    /// Fixed point of the predicted-covariance Riccati recursion.
    pub predicted_cov: DMatrix<f64>,
    pub filtered_cov: DMatrix<f64>,
    pub gain: DVector<f64>,
    pub iterations: usize,
}

/// One step of the predicted-covariance Riccati recursion.
pub fn riccati_step(dm: &DiscreteModel, p: &DMatrix<f64>) -> DMatrix<f64> {
    let ph = p * dm.h.transpose();
    let s = (&dm.h * &ph)[(0, 0)] + dm.r;
    let filt = p - &ph * ph.transpose() / s;
    symmetrized(&dm.a * filt * dm.a.transpose() + &dm.q)
}

/// Iterates the Riccati recursion from `Q` until successive iterates differ
/// by less than 1e-10 (Frobenius), up to 10 000 iterations.
pub fn stationary_gain(dm: &DiscreteModel) -> Result<StationaryFilter> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 10_000;
    let mut p = dm.q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITER {
        let next = riccati_step(dm, &p);
        residual = frobenius(&(&next - &p));
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual < TOL {
            let ph = &p * dm.h.transpose();
            let s = (&dm.h * &ph)[(0, 0)] + dm.r;
            let gain: DVector<f64> = ph.column(0) / s;
            let filtered_cov = symmetrized(&p - &gain * ph.transpose());
            return Ok(StationaryFilter { predicted_cov: p, filtered_cov, gain, iterations: it });
        }
    }
    Err(Error::Convergence { iterations: MAX_ITER, residual })
}

/// Negative log marginal likelihood through the filter's prediction-error
/// decomposition.
pub fn nlml(spec: &KernelSpec, data: &TimeSeries, noise_var: f64) -> Result<f64> {
    if data.observed_count() == 0 {
        return Err(Error::InsufficientData("series has no observed values".into()));
    }
    let sde = spec.to_state_space()?;
    let step = data.min_spacing().unwrap_or(1.0);
    let dm = discretize(&sde, step)?.with_noise(noise_var);
    let prior = GaussianState::zero_mean(sde.pinf.clone());
    let out = kf_filter(&dm, &prior, data)?;
    Ok(-out.total_log_likelihood())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, q: f64, r: f64) -> DiscreteModel {
        DiscreteModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, 1.0),
            r,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn conjugate_update_by_hand() {
        let dm = scalar(1.0, 0.0, 1.0);
        let prior = GaussianState::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0));
        let data = TimeSeries::regular(0.0, 1.0, &[2.0]);
        let out = kf_filter(&dm, &prior, &data).unwrap();
        assert_relative_eq!(out.filtered[0].mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(out.filtered[0].cov[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn all_missing_is_pure_prediction() {
        let dm = scalar(0.8, 0.36, 1.0); // Pinf = 1
        let prior = GaussianState::new(DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 0.1));
        let data = TimeSeries::new((0..6).map(f64::from).collect(), vec![None; 6]).unwrap();
        let out = kf_filter(&dm, &prior, &data).unwrap();
        for (k, s) in out.filtered.iter().enumerate() {
            assert_relative_eq!(s.mean[0], 2.0 * 0.8f64.powi(k as i32), epsilon = 1e-14);
        }
        let vars: Vec<f64> = out.filtered.iter().map(|s| s.cov[(0, 0)]).collect();
        assert!(vars.windows(2).all(|w| w[1] > w[0] && w[1] < 1.0));
        assert_eq!(out.total_log_likelihood(), 0.0);
    }

    #[test]
    fn grid_gaps_become_predict_steps() {
        let dm = scalar(0.9, 0.19, 0.5);
        let prior = GaussianState::zero_mean(DMatrix::from_element(1, 1, 1.0));
        let data = TimeSeries::new(vec![0.0, 3.0], vec![Some(1.0), Some(-1.0)]).unwrap();
        let out = kf_filter(&dm, &prior, &data).unwrap();
        assert_eq!(out.times, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(out.observations, vec![Some(1.0), None, None, Some(-1.0)]);
        assert_eq!(out.index_of(2.0), Some(2));
    }

    #[test]
    fn smoothing_single_point_is_filtering() {
        let dm = scalar(0.5, 0.75, 1.0);
        let prior = GaussianState::zero_mean(DMatrix::from_element(1, 1, 1.0));
        let out = kf_filter(&dm, &prior, &TimeSeries::regular(0.0, 1.0, &[0.3])).unwrap();
        let sm = rts_smooth(&dm, &out).unwrap();
        assert_eq!(sm.states, out.filtered);
    }

    #[test]
    fn smoothing_deterministic_dynamics_after_last_observation() {
        // Q = 0 and A = 1: the smoothed mean is constant across the trailing gap.
        let dm = scalar(1.0, 0.0, 0.5);
        let prior = GaussianState::zero_mean(DMatrix::from_element(1, 1, 1.0));
        let data = TimeSeries::new(vec![0.0, 4.0], vec![Some(1.2), None]).unwrap();
        let out = kf_filter(&dm, &prior, &data).unwrap();
        let sm = rts_smooth(&dm, &out).unwrap();
        let m0 = sm.states[0].mean[0];
        assert!(sm.states.iter().all(|s| (s.mean[0] - m0).abs() < 1e-14));
        assert_eq!(sm.states.last().unwrap(), out.filtered.last().unwrap());
    }

    #[test]
    fn scalar_riccati_matches_bisection() {
        let dm = scalar(0.5, 0.75, 1.0);
        let st = stationary_gain(&dm).unwrap();
        // Oracle: root of g(P) = 0.25 P (1 - P/(P+1)) + 0.75 - P by bisection.
        let g = |p: f64| 0.25 * p * (1.0 - p / (p + 1.0)) + 0.75 - p;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(st.predicted_cov[(0, 0)], 0.5 * (lo + hi), epsilon = 1e-9);
        let again = riccati_step(&dm, &st.predicted_cov);
        assert!(frobenius(&(again - &st.predicted_cov)) < 1e-9);
    }

    #[test]
    fn uninformative_observations_recover_prior_variance() {
        let dm = scalar(0.5, 0.75, 1e12);
        let st = stationary_gain(&dm).unwrap();
        assert_relative_eq!(st.predicted_cov[(0, 0)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn riccati_reports_non_convergence() {
        // Unstable and unobservable: covariance grows without bound.
        let dm = DiscreteModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.5]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            1.0,
            1.0,
        )
        .unwrap();
        assert!(matches!(stationary_gain(&dm), Err(Error::Convergence { .. })));
    }

    #[test]
    fn negative_innovation_is_rejected() {
        let dm = scalar(1.0, 0.0, -0.0);
        let prior = GaussianState::zero_mean(DMatrix::from_element(1, 1, 0.0));
        let err = kf_filter(&dm, &prior, &TimeSeries::regular(0.0, 1.0, &[1.0])).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
