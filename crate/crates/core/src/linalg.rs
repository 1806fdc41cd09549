//! Dense matrix helpers shared by the state-space and control code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

// Padé [13/13] coefficients for exp(x).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in matrix exponential argument".into()));
    }
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numeric("singular denominator in Padé approximant".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("matrix exponential overflowed".into()));
    }
    Ok(r)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Replaces `p` by `(p + pᵀ) / 2`.
pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

pub fn symmetrized(mut p: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut p);
    p
}

/// Solves the continuous Lyapunov equation `F P + P Fᵀ + W = 0` through its
/// vectorized Kronecker form. Only meant for the small state dimensions used
/// by the kernel models.
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let op = kron(&ident, f) + kron(f, &ident);
    let rhs = -DVector::from_column_slice(w.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("Lyapunov operator is singular".into()))?;
    Ok(symmetrized(DMatrix::from_column_slice(n, n, sol.as_slice())))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Lower Cholesky factor, retrying once with `jitter` added to the diagonal.
///
/// Returns the factor and whether jitter was needed.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, jitter: f64) -> Option<(DMatrix<f64>, bool)> {
    if let Some(c) = m.clone().cholesky() {
        return Some((c.l(), false));
    }
    let n = m.nrows();
    let bumped = m + DMatrix::<f64>::identity(n, n) * jitter;
    bumped.cholesky().map(|c| (c.l(), true))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_of_zero_is_identity() {
        let e = expm(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_matches_rotation() {
        let w = 2.7;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], w.cos(), epsilon = 1e-13);
        assert_relative_eq!(e[(1, 0)], w.sin(), epsilon = 1e-13);
    }

    #[test]
    fn expm_large_norm_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-40.0, 3.0, 0.5]));
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], (-40f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(e[(1, 1)], 3f64.exp(), max_relative = 1e-12);
        assert_relative_eq!(e[(2, 2)], 0.5f64.exp(), max_relative = 1e-13);
    }

    #[test]
    fn expm_nilpotent_series() {
        // exp of a strictly upper triangular matrix terminates after three terms.
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        let e = expm(&a).unwrap();
        let expected = DMatrix::identity(3, 3) + &a + &a * &a * 0.5;
        assert!((e - expected).abs().max() < 1e-13);
    }

    #[test]
    fn expm_rejects_nan() {
        let a = DMatrix::from_element(2, 2, f64::NAN);
        assert!(matches!(expm(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn lyapunov_scalar() {
        let f = DMatrix::from_element(1, 1, -0.5);
        let w = DMatrix::from_element(1, 1, 1.0);
        let p = solve_lyapunov(&f, &w).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);
    }
}
