//! Discrete Laplacian, its eigenbasis, and the Helmholtz band-pass filters.
//!
//! Every operator here works on a unit-spaced grid. Physical spacing only
//! matters to the dataset generators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Second-difference operator with Dirichlet boundaries: `-2` on the
/// diagonal and `1` on both off-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
}

impl Laplacian {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::dim("laplacian needs at least one sample"));
        }
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -2.0
            } else if i.abs_diff(j) == 1 {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self { matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Applies `A(k̄) = I + γ(L + k̄I)²` to `d` using the tridiagonal stencil.
    pub fn apply_a(&self, spec: &FilterSpec, d: &DVector<f64>) -> Result<DVector<f64>> {
        if d.len() != self.n() {
            return Err(Error::dim(format!(
                "vector has length {}, operator is {}",
                d.len(),
                self.n()
            )));
        }
        let mut once = vec![0.0; d.len()];
        shifted_apply(d.as_slice(), spec.wavenumber_sq, &mut once);
        let mut twice = vec![0.0; d.len()];
        shifted_apply(&once, spec.wavenumber_sq, &mut twice);
        Ok(DVector::from_fn(d.len(), |i, _| d[i] + spec.helmholtz_weight * twice[i]))
    }
}

/// `out = L v` for the Dirichlet stencil.
pub fn laplacian_apply(v: &[f64], out: &mut [f64]) {
    shifted_apply(v, 0.0, out);
}

/// `out = (L + shift·I) v`.
pub fn shifted_apply(v: &[f64], shift: f64, out: &mut [f64]) {
    let n = v.len();
    debug_assert_eq!(out.len(), n);
    for j in 0..n {
        let left = if j > 0 { v[j - 1] } else { 0.0 };
        let right = if j + 1 < n { v[j + 1] } else { 0.0 };
        out[j] = left + right + (shift - 2.0) * v[j];
    }
}

/// `‖(L + shift·I) v‖²`.
pub fn helmholtz_residual_sq(v: &[f64], shift: f64) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for j in 0..n {
        let left = if j > 0 { v[j - 1] } else { 0.0 };
        let right = if j + 1 < n { v[j + 1] } else { 0.0 };
        let r = left + right + (shift - 2.0) * v[j];
        acc += r * r;
    }
    acc
}

/// Minimizer of `‖(L + k̄I) d‖²` over `k̄ ∈ [0, 4]`: the negated Rayleigh
/// quotient of `L`, clamped. `None` when `d` is zero.
pub fn best_wavenumber_sq(d: &[f64]) -> Option<f64> {
    let norm_sq: f64 = d.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return None;
    }
    // -dᵀLd = Σ 2d_j² - 2Σ d_j d_{j+1}
    let cross: f64 = d.windows(2).map(|w| w[0] * w[1]).sum();
    let quotient = (2.0 * norm_sq - 2.0 * cross) / norm_sq;
    Some(quotient.clamp(0.0, 4.0))
}

/// Orthonormal eigenvectors of the Laplacian (as columns) with their
/// eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    /// `Γᵀ Z`: coordinates of the columns of `z` in the eigenbasis.
    pub fn project(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(z.nrows())?;
        Ok(self.vectors.tr_mul(z))
    }

    /// `Γ Ẑ`: maps eigenbasis coordinates back to samples.
    pub fn lift(&self, coords: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(coords.nrows())?;
        Ok(&self.vectors * coords)
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.n() {
            return Err(Error::dim(format!(
                "input has {rows} rows, basis has dimension {}",
                self.n()
            )));
        }
        Ok(())
    }
}

pub fn eigendecompose(lap: &Laplacian) -> Result<SpectralBasis> {
    let n = lap.n();
    let matrix = lap.matrix().clone();
    let eig = SymmetricEigen::try_new(matrix, f64::EPSILON, 100 * n.max(10)).ok_or(
        Error::NumericalFailure {
            context: "laplacian eigensolver did not converge",
            residual: f64::INFINITY,
        },
    )?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let scale = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }

    let reconstructed = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
    let residual = (reconstructed - lap.matrix()).norm() / lap.matrix().norm();
    let orthogonality = (vectors.tr_mul(&vectors) - DMatrix::identity(n, n)).norm();
    if residual > 1e-10 || orthogonality > 1e-10 {
        return Err(Error::NumericalFailure {
            context: "laplacian eigendecomposition",
            residual: residual.max(orthogonality),
        });
    }
    Ok(SpectralBasis { vectors, values })
}

/// Center and sharpness of a Helmholtz band-pass filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    /// Squared angular wavenumber on the unit grid, in `[0, 4]`.
    pub wavenumber_sq: f64,
    /// Weight of the Helmholtz penalty; larger values narrow the passband.
    pub helmholtz_weight: f64,
}

impl FilterSpec {
    pub fn new(wavenumber_sq: f64, helmholtz_weight: f64) -> Result<Self> {
        if !(0.0..=4.0).contains(&wavenumber_sq) {
            return Err(Error::param(format!(
                "squared wavenumber {wavenumber_sq} outside [0, 4]"
            )));
        }
        if !(helmholtz_weight >= 0.0 && helmholtz_weight.is_finite()) {
            return Err(Error::param(format!(
                "helmholtz weight {helmholtz_weight} must be finite and nonnegative"
            )));
        }
        Ok(Self {
            wavenumber_sq,
            helmholtz_weight,
        })
    }
}

/// Gain of the filter at a single Laplacian eigenvalue.
pub fn filter_gain(eigenvalue: f64, spec: &FilterSpec) -> f64 {
    let offset = spec.wavenumber_sq + eigenvalue;
    1.0 / (1.0 + spec.helmholtz_weight * offset * offset).sqrt()
}

/// Diagonal of `(I + γ(k̄I + Λ)²)^{-1/2}`.
pub fn filter_coefficients(basis: &SpectralBasis, spec: &FilterSpec) -> DVector<f64> {
    basis.values.map(|v| filter_gain(v, spec))
}

/// `A(k̄)^{-1/2} Z` through the eigenbasis.
pub fn apply_a_inv_half(
    basis: &SpectralBasis,
    spec: &FilterSpec,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut coords = basis.project(z)?;
    let gains = filter_coefficients(basis, spec);
    for (i, mut row) in coords.row_iter_mut().enumerate() {
        row *= gains[i];
    }
    basis.lift(&coords)
}

/// `Γᵀ y`.
pub fn spectrum(basis: &SpectralBasis, y: &DVector<f64>) -> Result<DVector<f64>> {
    basis.check_rows(y.len())?;
    Ok(basis.vectors.tr_mul(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dirichlet_eigenvalue(i: usize, m: usize) -> f64 {
        let s = (PI * i as f64 / (2.0 * (m as f64 + 1.0))).sin();
        -4.0 * s * s
    }

    #[test]
    fn small_laplacians() {
        let l3 = Laplacian::new(3).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[-2., 1., 0., 1., -2., 1., 0., 1., -2.]);
        assert_eq!(l3.matrix(), &expected);
        assert_eq!(Laplacian::new(1).unwrap().matrix()[(0, 0)], -2.0);
        assert!(matches!(Laplacian::new(0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn row_sums_follow_dirichlet_pattern() {
        let l = Laplacian::new(7).unwrap();
        for i in 0..7 {
            let sum: f64 = l.matrix().row(i).iter().sum();
            let expected = if i == 0 || i == 6 { -1.0 } else { 0.0 };
            assert_eq!(sum, expected);
        }
    }

    #[test]
    fn eigenvalues_small_cases() {
        let b3 = eigendecompose(&Laplacian::new(3).unwrap()).unwrap();
        let s = 2f64.sqrt();
        for (got, want) in b3.eigenvalues().iter().zip([-2.0 - s, -2.0, -2.0 + s]) {
            assert!((got - want).abs() < 1e-12);
        }
        let b2 = eigendecompose(&Laplacian::new(2).unwrap()).unwrap();
        assert!((b2.eigenvalues()[0] + 3.0).abs() < 1e-12);
        assert!((b2.eigenvalues()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_match_closed_form() {
        for m in [1, 3, 16, 64, 111] {
            let basis = eigendecompose(&Laplacian::new(m).unwrap()).unwrap();
            // ascending order means the largest index comes first
            for i in 1..=m {
                let got = basis.eigenvalues()[m - i];
                assert!((got - dirichlet_eigenvalue(i, m)).abs() < 1e-9);
                assert!((-4.0..=0.0).contains(&got));
            }
        }
    }

    #[test]
    fn eigenvector_signs_are_fixed() {
        let basis = eigendecompose(&Laplacian::new(20).unwrap()).unwrap();
        for col in basis.eigenvectors().column_iter() {
            assert!(col[0] > 0.0);
        }
    }

    #[test]
    fn filter_special_points() {
        let basis = eigendecompose(&Laplacian::new(30).unwrap()).unwrap();
        let flat = FilterSpec::new(1.3, 0.0).unwrap();
        assert!(filter_coefficients(&basis, &flat).iter().all(|&c| c == 1.0));

        let j = 11;
        let centered = FilterSpec::new(-basis.eigenvalues()[j], 50.0).unwrap();
        assert_eq!(filter_coefficients(&basis, &centered)[j], 1.0);

        let gamma = 400.0;
        let spec = FilterSpec::new(2.0, gamma).unwrap();
        let at_cutoff = filter_gain(-2.0 + 1.0 / gamma.sqrt(), &spec);
        assert!((at_cutoff - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn filter_spec_validation() {
        assert!(FilterSpec::new(-0.1, 1.0).is_err());
        assert!(FilterSpec::new(4.1, 1.0).is_err());
        assert!(FilterSpec::new(1.0, -1.0).is_err());
        assert!(FilterSpec::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn inverse_half_matches_dense_construction() {
        let basis = eigendecompose(&Laplacian::new(8).unwrap()).unwrap();
        let spec = FilterSpec::new(0.7, 12.0).unwrap();
        let z = DMatrix::from_fn(8, 3, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let got = apply_a_inv_half(&basis, &spec, &z).unwrap();
        let g = basis.eigenvectors();
        let dense = g * DMatrix::from_diagonal(&filter_coefficients(&basis, &spec)) * g.transpose();
        assert!((got - dense * &z).amax() < 1e-12);
        assert!(apply_a_inv_half(&basis, &spec, &DMatrix::zeros(7, 2)).is_err());
    }

    #[test]
    fn eigenvector_passes_as_scalar_multiple() {
        let basis = eigendecompose(&Laplacian::new(12).unwrap()).unwrap();
        let spec = FilterSpec::new(1.1, 30.0).unwrap();
        let j = 4;
        let v = DMatrix::from_column_slice(12, 1, basis.eigenvectors().column(j).as_slice());
        let got = apply_a_inv_half(&basis, &spec, &v).unwrap();
        let gain = filter_gain(basis.eigenvalues()[j], &spec);
        assert!((got - v * gain).amax() < 1e-12);
    }

    #[test]
    fn apply_a_quadratic_form() {
        let lap = Laplacian::new(9).unwrap();
        let spec = FilterSpec::new(0.4, 7.0).unwrap();
        let d = DVector::from_fn(9, |i, _| (i as f64 * 1.3).cos() + 0.2);
        let ad = lap.apply_a(&spec, &d).unwrap();
        let shifted = lap.matrix() * &d + &d * spec.wavenumber_sq;
        let expected = d.norm_squared() + spec.helmholtz_weight * shifted.norm_squared();
        assert!((d.dot(&ad) - expected).abs() < 1e-12 * expected);

        let flat = FilterSpec::new(0.4, 0.0).unwrap();
        assert_eq!(lap.apply_a(&flat, &d).unwrap(), d);
    }

    #[test]
    fn apply_a_fixes_matching_eigenvector() {
        let lap = Laplacian::new(10).unwrap();
        let basis = eigendecompose(&lap).unwrap();
        let j = 6;
        let v = basis.eigenvectors().column(j).into_owned();
        let spec = FilterSpec::new(-basis.eigenvalues()[j], 100.0).unwrap();
        assert!((lap.apply_a(&spec, &v).unwrap() - &v).amax() < 1e-12);
    }

    #[test]
    fn spectrum_of_eigenvector_is_unit_vector() {
        let basis = eigendecompose(&Laplacian::new(10).unwrap()).unwrap();
        let v = basis.eigenvectors().column(3).into_owned();
        let s = spectrum(&basis, &v).unwrap();
        for (i, value) in s.iter().enumerate() {
            let expected = if i == 3 { 1.0 } else { 0.0 };
            assert!((value - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_of_sampled_sine_peaks_at_matching_index() {
        let m = 49;
        let basis = eigendecompose(&Laplacian::new(m).unwrap()).unwrap();
        // sin(3πℓ) on the interior points ℓ = j/(m+1)
        let y = DVector::from_fn(m, |j, _| (3.0 * PI * (j + 1) as f64 / (m + 1) as f64).sin());
        let s = spectrum(&basis, &y).unwrap();
        let peak = s.iamax();
        let target = 4.0 * (3.0 * PI / (2.0 * (m + 1) as f64)).sin().powi(2);
        let nearest = (0..m)
            .min_by(|&a, &b| {
                (basis.eigenvalues()[a] + target)
                    .abs()
                    .total_cmp(&(basis.eigenvalues()[b] + target).abs())
            })
            .unwrap();
        assert_eq!(peak, nearest);
    }

    #[test]
    fn best_wavenumber_of_eigenvector() {
        let basis = eigendecompose(&Laplacian::new(15).unwrap()).unwrap();
        for j in 0..15 {
            let v = basis.eigenvectors().column(j).into_owned();
            let k = best_wavenumber_sq(v.as_slice()).unwrap();
            assert!((k + basis.eigenvalues()[j]).abs() < 1e-12);
        }
        assert_eq!(best_wavenumber_sq(&[0.0, 0.0]), None);
    }
}
