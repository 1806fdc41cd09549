//! Additive-noise unscented Kalman filter with the scaled sigma-point set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, symmetrize};
use crate::ssm::GaussianState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 2.0, kappa: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaWeights {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    /// Spread factor `n + λ`.
    pub spread: f64,
}

impl UkfParams {
    pub fn weights(&self, n: usize) -> SigmaWeights {
        let nf = n as f64;
        let lambda = self.alpha * self.alpha * (nf + self.kappa) - nf;
        let spread = nf + lambda;
        let wi = 0.5 / spread;
        let mut mean = vec![wi; 2 * n + 1];
        let mut cov = mean.clone();
        mean[0] = lambda / spread;
        cov[0] = lambda / spread + (1.0 - self.alpha * self.alpha + self.beta);
        SigmaWeights { mean, cov, spread }
    }

    pub fn sigma_points(&self, s: &GaussianState, w: &SigmaWeights) -> Result<Vec<DVector<f64>>> {
        let n = s.dim();
        let scaled = &s.cov * w.spread;
        let jitter = 1e-12 * (scaled.trace() / n.max(1) as f64).max(1e-300);
        let (l, _) = cholesky_with_jitter(&scaled, jitter)
            .ok_or_else(|| Error::Numeric("sigma-point covariance is not positive definite".into()))?;
        let mut pts = Vec::with_capacity(2 * n + 1);
        pts.push(s.mean.clone());
        for i in 0..n {
            pts.push(&s.mean + l.column(i));
        }
        for i in 0..n {
            pts.push(&s.mean - l.column(i));
        }
        Ok(pts)
    }

    /// Time update through `f` with additive process noise `q`.
    pub fn predict<F>(&self, s: &GaussianState, f: F, q: &DMatrix<f64>) -> Result<GaussianState>
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        let w = self.weights(s.dim());
        let pts: Vec<DVector<f64>> = self.sigma_points(s, &w)?.iter().map(f).collect();
        let (mean, mut cov) = moments(&pts, &w);
        cov += q;
        symmetrize(&mut cov);
        Ok(GaussianState { mean, cov })
    }

    /// Measurement update of `s` with observation `y = h(x) + v`, `v ~ N(0, r)`.
    pub fn update<H>(&self, s: &GaussianState, y: &DVector<f64>, h: H, r: &DMatrix<f64>) -> Result<GaussianState>
    where
        H: Fn(&DVector<f64>) -> DVector<f64>,
    {
        let w = self.weights(s.dim());
        let pts = self.sigma_points(s, &w)?;
        let ys: Vec<DVector<f64>> = pts.iter().map(h).collect();
        let (y_mean, mut pyy) = moments(&ys, &w);
        pyy += r;
        let m = y.len();
        let mut pxy = DMatrix::zeros(s.dim(), m);
        for ((x, yi), wc) in pts.iter().zip(&ys).zip(&w.cov) {
            pxy += (x - &s.mean) * (yi - &y_mean).transpose() * *wc;
        }
        let chol = pyy
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("innovation covariance is not positive definite".into()))?;
        // K = Pxy Pyy⁻¹
        let k = chol.solve(&pxy.transpose()).transpose();
        let mean = &s.mean + &k * (y - &y_mean);
        let mut cov = &s.cov - &k * &pyy * k.transpose();
        symmetrize(&mut cov);
        Ok(GaussianState { mean, cov })
    }
}

fn moments(pts: &[DVector<f64>], w: &SigmaWeights) -> (DVector<f64>, DMatrix<f64>) {
    let n = pts[0].len();
    let mut mean = DVector::zeros(n);
    for (p, wm) in pts.iter().zip(&w.mean) {
        mean += p * *wm;
    }
    let mut cov = DMatrix::zeros(n, n);
    for (p, wc) in pts.iter().zip(&w.cov) {
        let d = p - &mean;
        cov += &d * d.transpose() * *wc;
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn weights_sum_to_one(n in 1usize..40, alpha in 1e-3f64..1.0, beta in 0.0f64..3.0, kappa in 0.0f64..3.0) {
            let w = UkfParams { alpha, beta, kappa }.weights(n);
            let sm: f64 = w.mean.iter().sum();
            let sc: f64 = w.cov.iter().sum::<f64>() - (1.0 - alpha * alpha + beta);
            prop_assert!((sm - 1.0).abs() < 1e-9);
            prop_assert!((sc - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_update_matches_kalman() {
        let p = UkfParams::default();
        let s = GaussianState::new(
            DVector::from_vec(vec![1.0, -0.5]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        );
        let hmat = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let r = DMatrix::from_element(1, 1, 0.5);
        let y = DVector::from_element(1, 0.7);
        let post = p.update(&s, &y, |x| &hmat * x, &r).unwrap();

        let sv = (&hmat * &s.cov * hmat.transpose())[(0, 0)] + 0.5;
        let k = &s.cov * hmat.transpose() / sv;
        let mean = &s.mean + &k * (0.7 - (&hmat * &s.mean)[0]);
        let cov = &s.cov - &k * k.transpose() * sv;
        assert!((post.mean - mean).abs().max() < 1e-10);
        assert!((post.cov - cov).abs().max() < 1e-10);
    }

    #[test]
    fn linear_predict_is_exact() {
        let p = UkfParams::default();
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]);
        let s = GaussianState::new(DVector::from_vec(vec![0.3, 0.1]), DMatrix::identity(2, 2));
        let q = DMatrix::identity(2, 2) * 0.01;
        let pred = p.predict(&s, |x| &a * x, &q).unwrap();
        assert!((pred.mean - &a * &s.mean).abs().max() < 1e-12);
        let cov = &a * &s.cov * a.transpose() + q;
        assert_relative_eq!((pred.cov - cov).abs().max(), 0.0, epsilon = 1e-10);
    }
}
