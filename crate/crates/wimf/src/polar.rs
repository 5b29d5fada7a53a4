//! The polar problem: the largest value of `dᵀ Z x` over unit `x` and all `d`
//! with `dᵀ A(k̄) d ≤ 1` for some `k̄ ∈ [0, 4]`.
//!
//! For fixed `k̄` the answer is the spectral norm of `A(k̄)^{-1/2} Z`, so the
//! problem reduces to a one-dimensional search over `k̄` followed by a top
//! singular pair.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::linalg::spectral_norm;
use crate::spectral::{filter_gain, FilterSpec, SpectralBasis};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchConfig {
    /// Points on the uniform coarse grid over `domain`.
    pub coarse_points: usize,
    /// Points on each fine grid around a coarse local maximum.
    pub refine_points: usize,
    /// Half-width of each fine grid; `None` uses one coarse step.
    pub refine_radius: Option<f64>,
    pub domain: (f64, f64),
    /// Coarse local maxima that get refined, best first.
    pub max_peaks: usize,
    /// Densify the coarse grid so its step is at most half the filter's
    /// -3 dB half-width `1/√γ`.
    pub match_bandwidth: bool,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            coarse_points: 200,
            refine_points: 200,
            refine_radius: None,
            domain: (0.0, 4.0),
            max_peaks: 4,
            match_bandwidth: true,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(0.0 <= lo && lo < hi && hi <= 4.0) {
            return Err(Error::param(format!(
                "line search domain [{lo}, {hi}] must be a proper subinterval of [0, 4]"
            )));
        }
        if self.coarse_points < 2 || self.refine_points < 2 {
            return Err(Error::param("line search grids need at least two points"));
        }
        if self.max_peaks == 0 {
            return Err(Error::param("line search must refine at least one peak"));
        }
        if let Some(r) = self.refine_radius {
            if !(r > 0.0 && r <= hi - lo) {
                return Err(Error::param(format!(
                    "refine radius {r} must be positive and at most the domain width"
                )));
            }
        }
        Ok(())
    }

    /// Coarse grid size actually used for a given Helmholtz weight.
    pub fn effective_coarse_points(&self, helmholtz_weight: f64) -> usize {
        let (lo, hi) = self.domain;
        if !self.match_bandwidth || helmholtz_weight <= 0.0 {
            return self.coarse_points;
        }
        let max_step = 0.5 / helmholtz_weight.sqrt();
        let needed = ((hi - lo) / max_step).ceil() as usize + 1;
        self.coarse_points.max(needed)
    }
}

#[derive(Debug, Clone)]
pub struct PolarSolution {
    pub d_star: DVector<f64>,
    pub x_star: DVector<f64>,
    pub k_bar_star: f64,
    pub value: f64,
    /// Set when `Z = 0`; the vectors are then zero.
    pub degenerate: bool,
    /// Worst-case shortfall of the coarse grid: Lipschitz bound times half a
    /// coarse step.
    pub grid_error_bound: f64,
    pub evaluations: usize,
}

/// `σ_max(A(k̄)^{-1/2} Z)` as a function of `k̄`, with the eigenbasis
/// projection and Gram matrix computed once.
pub struct LineObjective<'a> {
    basis: &'a SpectralBasis,
    helmholtz_weight: f64,
    projected: DMatrix<f64>,
    /// `Ẑ Ẑᵀ` when the row space is smaller, else `None`.
    row_gram: Option<DMatrix<f64>>,
}

impl<'a> LineObjective<'a> {
    pub fn new(basis: &'a SpectralBasis, helmholtz_weight: f64, z: &DMatrix<f64>) -> Result<Self> {
        if !(helmholtz_weight >= 0.0 && helmholtz_weight.is_finite()) {
            return Err(Error::param(format!(
                "helmholtz weight {helmholtz_weight} must be finite and nonnegative"
            )));
        }
        let projected = basis.project(z)?;
        let row_gram = (projected.nrows() <= projected.ncols())
            .then(|| &projected * projected.transpose());
        Ok(Self {
            basis,
            helmholtz_weight,
            projected,
            row_gram,
        })
    }

    fn gains(&self, k_bar: f64) -> Vec<f64> {
        let spec = FilterSpec {
            wavenumber_sq: k_bar,
            helmholtz_weight: self.helmholtz_weight,
        };
        self.basis
            .eigenvalues()
            .iter()
            .map(|&v| filter_gain(v, &spec))
            .collect()
    }

    /// Gram matrix of the filtered `Z` on its smaller side.
    fn filtered_gram(&self, gains: &[f64]) -> DMatrix<f64> {
        match &self.row_gram {
            Some(g) => DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| gains[i] * g[(i, j)] * gains[j]),
            None => {
                let filtered = self.filtered(gains);
                filtered.tr_mul(&filtered)
            }
        }
    }

    fn filtered(&self, gains: &[f64]) -> DMatrix<f64> {
        let mut f = self.projected.clone();
        for (i, mut row) in f.row_iter_mut().enumerate() {
            row *= gains[i];
        }
        f
    }

    pub fn value(&self, k_bar: f64) -> f64 {
        let gram = self.filtered_gram(&self.gains(k_bar));
        let top = gram.symmetric_eigenvalues().max();
        top.max(0.0).sqrt()
    }

    /// Top singular pair at `k_bar`, mapped back to samples: `(d*, x*, σ)`.
    fn top_pair(&self, k_bar: f64) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let gains = self.gains(k_bar);
        let gram = self.filtered_gram(&gains);
        let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 0).ok_or(Error::NumericalFailure {
            context: "polar singular pair",
            residual: f64::INFINITY,
        })?;
        let top = eig.eigenvalues.imax();
        let sigma = eig.eigenvalues[top].max(0.0).sqrt();
        let v = eig.eigenvectors.column(top).into_owned();
        let filtered = self.filtered(&gains);

        let (u, x) = if self.row_gram.is_some() {
            let mut x = filtered.tr_mul(&v);
            let norm = x.norm();
            if norm > 0.0 {
                x /= norm;
            }
            (v, x)
        } else {
            let mut u = &filtered * &v;
            let norm = u.norm();
            if norm > 0.0 {
                u /= norm;
            }
            (u, v)
        };
        // d* = A^{-1/2} Γ u = Γ diag(gains) u
        let scaled = DVector::from_fn(u.len(), |i, _| gains[i] * u[i]);
        let d = self.basis.eigenvectors() * scaled;
        Ok((d, x, sigma))
    }
}

/// `σ_max(A(k̄)^{-1/2} Z)` at a single `k̄`.
pub fn line_search_objective(
    basis: &SpectralBasis,
    helmholtz_weight: f64,
    z: &DMatrix<f64>,
    k_bar: f64,
) -> Result<f64> {
    FilterSpec::new(k_bar, helmholtz_weight)?;
    Ok(LineObjective::new(basis, helmholtz_weight, z)?.value(k_bar))
}

/// Running maximum with ties resolved toward the smaller abscissa.
#[derive(Clone, Copy)]
struct Best {
    k: f64,
    value: f64,
}

impl Best {
    fn offer(&mut self, k: f64, value: f64) {
        if value > self.value || (value == self.value && k < self.k) {
            self.k = k;
            self.value = value;
        }
    }
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
        .collect()
}

pub fn solve_polar(
    basis: &SpectralBasis,
    helmholtz_weight: f64,
    z: &DMatrix<f64>,
    cfg: &LineSearchConfig,
) -> Result<PolarSolution> {
    cfg.validate()?;
    let objective = LineObjective::new(basis, helmholtz_weight, z)?;
    if z.iter().all(|&v| v == 0.0) {
        return Ok(PolarSolution {
            d_star: DVector::zeros(z.nrows()),
            x_star: DVector::zeros(z.ncols()),
            k_bar_star: 0.0,
            value: 0.0,
            degenerate: true,
            grid_error_bound: 0.0,
            evaluations: 0,
        });
    }

    let (lo, hi) = cfg.domain;
    let coarse_points = cfg.effective_coarse_points(helmholtz_weight);
    let coarse = linspace(lo, hi, coarse_points);
    let coarse_step = (hi - lo) / (coarse_points - 1) as f64;
    let values: Vec<f64> = coarse.par_iter().map(|&k| objective.value(k)).collect();
    let mut evaluations = values.len();

    let mut best = Best {
        k: coarse[0],
        value: values[0],
    };
    for (&k, &v) in coarse.iter().zip(&values) {
        best.offer(k, v);
    }

    let mut peaks: Vec<usize> = (0..coarse.len())
        .filter(|&i| {
            let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
            let right = values.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
            values[i] >= left && values[i] >= right
        })
        .collect();
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    peaks.truncate(cfg.max_peaks);

    let radius = cfg.refine_radius.unwrap_or(coarse_step);
    for &peak in &peaks {
        let center = coarse[peak];
        let fine = linspace((center - radius).max(lo), (center + radius).min(hi), cfg.refine_points);
        let fine_values: Vec<f64> = fine.par_iter().map(|&k| objective.value(k)).collect();
        evaluations += fine.len();
        let mut local = Best {
            k: fine[0],
            value: fine_values[0],
        };
        for (&k, &v) in fine.iter().zip(&fine_values) {
            local.offer(k, v);
        }
        best.offer(local.k, local.value);

        let fine_step = fine[1] - fine[0];
        let (k, v, used) = golden_max(
            |k| objective.value(k),
            (local.k - fine_step).max(lo),
            (local.k + fine_step).min(hi),
        );
        evaluations += used;
        best.offer(k, v);
    }

    let (d_star, x_star, sigma) = objective.top_pair(best.k)?;
    let z_norm = objective.value_unfiltered_norm();
    Ok(PolarSolution {
        d_star,
        x_star,
        k_bar_star: best.k,
        value: sigma.max(best.value),
        degenerate: false,
        grid_error_bound: lipschitz_constant(helmholtz_weight, z_norm) * coarse_step / 2.0,
        evaluations,
    })
}

impl LineObjective<'_> {
    fn value_unfiltered_norm(&self) -> f64 {
        let gains = vec![1.0; self.projected.nrows()];
        self.filtered_gram(&gains).symmetric_eigenvalues().max().max(0.0).sqrt()
    }
}

/// Golden-section maximization on `[a, b]`; returns the best point seen.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64, usize) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut best = Best {
        k: a,
        value: f(a),
    };
    best.offer(b, f(b));
    let mut evals = 2;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    evals += 2;
    best.offer(c, fc);
    best.offer(d, fd);
    while b - a > 1e-12 * (1.0 + a.abs()) && evals < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            best.offer(c, fc);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            best.offer(d, fd);
        }
        evals += 1;
    }
    (best.k, best.value, evals)
}

/// Lipschitz constant in `k̄` of the line-search objective given `‖Z‖₂`.
pub fn lipschitz_constant(helmholtz_weight: f64, z_spectral_norm: f64) -> f64 {
    let g = helmholtz_weight;
    if g >= 1.0 / 32.0 {
        2.0 / (3.0 * 3f64.sqrt()) * g.sqrt() * z_spectral_norm
    } else {
        4.0 * g * (1.0 + 16.0 * g).powf(-1.5) * z_spectral_norm
    }
}

pub fn lipschitz_bound(helmholtz_weight: f64, z: &DMatrix<f64>) -> Result<f64> {
    Ok(lipschitz_constant(helmholtz_weight, spectral_norm(z)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Optimal,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub verdict: Verdict,
    /// `polar - 1`; zero at a global optimum.
    pub gap: f64,
    /// The polar value fell below `1 - ε`, which a stationary point should
    /// not allow. Usually a sign that the descent stopped early.
    pub undershoot: bool,
}

pub fn optimality_gap(polar_value: f64, epsilon: f64) -> Certificate {
    let gap = polar_value - 1.0;
    Certificate {
        verdict: if gap <= epsilon {
            Verdict::Optimal
        } else {
            Verdict::Continue
        },
        gap,
        undershoot: gap < -epsilon,
    }
}
