use nalgebra::{DMatrix, DVector};

use super::TimeSeries;
use crate::error::{invalid, Error, Result};
use crate::kernels::{kernel_eval, KernelSpec};
use crate::linalg::cholesky_with_jitter;

/// Posterior marginals of the latent function.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

struct Factorized {
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    times: Vec<f64>,
    y: DVector<f64>,
}

fn factorize(spec: &KernelSpec, train: &TimeSeries, noise_var: f64) -> Result<Factorized> {
    if !(noise_var > 0.0) {
        return Err(invalid("noise_var", "must be > 0"));
    }
    let (times, ys): (Vec<f64>, Vec<f64>) = train.observed().unzip();
    if times.is_empty() {
        return Err(Error::InsufficientData("no observed training values".into()));
    }
    let n = times.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(spec, times[i] - times[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise_var;
    }
    let (l, _) = cholesky_with_jitter(&k, 1e-8 * spec.variance())
        .ok_or_else(|| Error::Numeric("Gram matrix is not positive definite".into()))?;
    let y = DVector::from_vec(ys);
    let z = l.solve_lower_triangular(&y).expect("non-singular factor");
    let alpha = l.transpose().solve_upper_triangular(&z).expect("non-singular factor");
    Ok(Factorized { l, alpha, times, y })
}

/// Exact zero-mean GP regression with Gaussian noise. Quadratic memory and
/// cubic time; kept as the reference for the state-space route.
pub fn gp_regress(
    spec: &KernelSpec,
    train: &TimeSeries,
    noise_var: f64,
    test_times: &[f64],
) -> Result<GpPosterior> {
    let fac = factorize(spec, train, noise_var)?;
    let prior_var = kernel_eval(spec, 0.0)?;
    let mut mean = Vec::with_capacity(test_times.len());
    let mut var = Vec::with_capacity(test_times.len());
    for &t in test_times {
        let ks = fac
            .times
            .iter()
            .map(|&ti| kernel_eval(spec, t - ti))
            .collect::<Result<Vec<_>>>()?;
        let ks = DVector::from_vec(ks);
        mean.push(ks.dot(&fac.alpha));
        let v = fac.l.solve_lower_triangular(&ks).expect("non-singular factor");
        var.push(prior_var - v.dot(&v));
    }
    Ok(GpPosterior { mean, var })
}

/// Negative log marginal likelihood from the dense Cholesky factorization.
pub fn nlml_dense(spec: &KernelSpec, data: &TimeSeries, noise_var: f64) -> Result<f64> {
    let fac = factorize(spec, data, noise_var)?;
    let n = fac.y.len() as f64;
    let logdet: f64 = fac.l.diagonal().iter().map(|d| d.ln()).sum();
    Ok(0.5 * fac.y.dot(&fac.alpha) + logdet + 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MaternKernel;
    use approx::assert_relative_eq;

    fn ou() -> KernelSpec {
        KernelSpec::Matern(MaternKernel::new(0, 1.0, 2.0).unwrap())
    }

    #[test]
    fn interpolates_with_tiny_noise() {
        let data = TimeSeries::regular(0.0, 1.0, &[0.4, -0.2, 1.1]);
        let post = gp_regress(&ou(), &data, 1e-10, &[1.0]).unwrap();
        assert!((post.mean[0] + 0.2).abs() < 1e-4);
    }

    #[test]
    fn far_extrapolation_recovers_prior() {
        let data = TimeSeries::regular(0.0, 1.0, &[0.4, -0.2, 1.1]);
        let post = gp_regress(&ou(), &data, 0.1, &[200.0]).unwrap();
        assert!((post.var[0] - 1.0).abs() < 1e-6);
        assert!(post.mean[0].abs() < 1e-6);
    }

    #[test]
    fn single_point_nlml() {
        let data = TimeSeries::regular(0.0, 1.0, &[0.0]);
        let r = 0.3;
        let v = nlml_dense(&ou(), &data, r).unwrap();
        assert_relative_eq!(v, 0.5 * (2.0 * std::f64::consts::PI * (1.0 + r)).ln(), epsilon = 1e-14);
    }

    #[test]
    fn rejects_empty_and_bad_noise() {
        let empty = TimeSeries::new(vec![0.0], vec![None]).unwrap();
        assert!(matches!(gp_regress(&ou(), &empty, 0.1, &[0.0]), Err(Error::InsufficientData(_))));
        let data = TimeSeries::regular(0.0, 1.0, &[0.0]);
        assert!(gp_regress(&ou(), &data, 0.0, &[0.0]).is_err());
    }
}
