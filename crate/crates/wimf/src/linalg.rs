//! Singular values and vectors.
//!
//! nalgebra's bidiagonal SVD returns inaccurate factors for some
//! rank-deficient inputs, so the matrix is first reduced to a small square
//! triangle by Householder QR and then diagonalized with one-sided Jacobi
//! rotations, which keep small singular values accurate.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Rotates column pairs of `a` until they are mutually orthogonal. Returns
/// the rotated matrix and the accumulated rotation `v`, so that
/// `a_in · v = a_out`.
fn one_sided_jacobi(mut a: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    let mut v = DMatrix::identity(n, n);
    // columns below this squared norm are numerically zero
    let negligible = a.norm_squared() * f64::EPSILON * f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha.min(beta) <= negligible || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    for i in 0..m.nrows() {
                        let x = m[(i, p)];
                        let y = m[(i, q)];
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            return Ok((a, v));
        }
    }
    Err(Error::NumericalFailure {
        context: "jacobi singular value sweeps",
        residual: f64::NAN,
    })
}

/// Thin SVD restricted to the left side: `(U, σ)` with `σ` descending and
/// `min(rows, cols)` entries.
pub fn left_svd(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if y.is_empty() {
        return Ok((DMatrix::zeros(y.nrows(), 0), Vec::new()));
    }
    let wide = y.nrows() <= y.ncols();
    let (left, sigma) = if wide {
        // Yᵀ = QR and RV = WΣ give Y = V Σ (QW)ᵀ
        let r = y.transpose().qr().r();
        let (rotated, v) = one_sided_jacobi(r)?;
        let sigma: Vec<f64> = rotated.column_iter().map(|c| c.norm()).collect();
        (v, sigma)
    } else {
        // Y = QR and RV = WΣ give Y = (QW) Σ Vᵀ
        let qr = y.clone().qr();
        let (rotated, _) = one_sided_jacobi(qr.r())?;
        let sigma: Vec<f64> = rotated.column_iter().map(|c| c.norm()).collect();
        let mut w = rotated;
        for (j, mut col) in w.column_iter_mut().enumerate() {
            if sigma[j] > 0.0 {
                col /= sigma[j];
            }
        }
        (qr.q() * w, sigma)
    };

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let u = DMatrix::from_columns(&order.iter().map(|&i| left.column(i)).collect::<Vec<_>>());
    Ok((u, order.iter().map(|&i| sigma[i]).collect()))
}

/// Singular values in descending order.
pub fn singular_values(y: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(left_svd(y)?.1)
}

/// Largest singular value.
pub fn spectral_norm(y: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(y)?.first().copied().unwrap_or(0.0))
}

/// Leading `count` left singular vectors with their singular values.
pub fn left_singular_vectors(y: &DMatrix<f64>, count: usize) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let (u, sigma) = left_svd(y)?;
    let k = count.min(sigma.len());
    Ok((
        (0..k).map(|i| u.column(i).into_owned()).collect(),
        sigma[..k].to_vec(),
    ))
}

/// Singular values at or below this are treated as zero.
pub fn rank_tolerance(largest: f64, rows: usize, cols: usize) -> f64 {
    largest * rows.max(cols) as f64 * f64::EPSILON * 8.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_factorization(y: &DMatrix<f64>) {
        let (u, sigma) = left_svd(y).unwrap();
        let k = sigma.len();
        assert_eq!(k, y.nrows().min(y.ncols()));
        assert!(sigma.windows(2).all(|w| w[0] >= w[1]));
        let top = sigma[0];
        for i in 0..k {
            if sigma[i] <= rank_tolerance(top, y.nrows(), y.ncols()) {
                continue;
            }
            let ui = u.column(i);
            assert!((ui.norm() - 1.0).abs() < 1e-10);
            // y yᵀ u = σ² u
            let lhs = y * (y.transpose() * ui);
            assert!((lhs - ui * sigma[i] * sigma[i]).amax() < 1e-10 * top * top);
        }
        let frob: f64 = sigma.iter().map(|s| s * s).sum();
        assert!((frob - y.norm_squared()).abs() < 1e-10 * y.norm_squared());
    }

    #[test]
    fn rank_one_singular_value() {
        let d = DMatrix::from_fn(12, 1, |i, _| (i as f64 * 0.4).sin() - 0.1);
        let x = DMatrix::from_fn(1, 9, |_, j| (j as f64).cos());
        let y = &d * &x;
        let sv = singular_values(&y).unwrap();
        assert!((sv[0] - d.norm() * x.norm()).abs() < 1e-12);
        assert!(sv[1] < 1e-14 * sv[0]);
        let (u, s) = left_singular_vectors(&y, 1).unwrap();
        let unit = d.column(0) / d.norm();
        let err = (&u[0] - &unit).amax().min((&u[0] + &unit).amax());
        assert!(err < 1e-12);
        assert!((s[0] - sv[0]).abs() < 1e-12);
        check_factorization(&y);
        check_factorization(&y.transpose());
    }

    #[test]
    fn known_diagonal() {
        let mut y = DMatrix::zeros(4, 6);
        y[(0, 3)] = 2.0;
        y[(2, 1)] = -5.0;
        y[(3, 0)] = 1.0;
        let sv = singular_values(&y).unwrap();
        for (got, want) in sv.iter().zip([5.0, 2.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-15, "{sv:?}");
        }
    }

    #[test]
    fn random_shapes_and_ranks() {
        for t in 0..300usize {
            let n = 2 + t % 13;
            let m = 2 + (t * 7) % 11;
            let r = 1 + t % 4;
            let a = DMatrix::from_fn(n, r, |i, j| ((i * 31 + j * 17 + t * 5) as f64 * 0.613).sin());
            let b = DMatrix::from_fn(r, m, |i, j| ((i * 13 + j * 29 + t * 3) as f64 * 0.377).cos());
            check_factorization(&(a * b));
        }
    }
}
