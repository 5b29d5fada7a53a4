//! Block descent on the regularized factorization objective, with columns
//! appended from the polar problem until the optimality certificate holds.

use nalgebra::{DMatrix, DVector};

use crate::linalg::spectral_norm;
use crate::polar::{optimality_gap, solve_polar, LineSearchConfig, PolarSolution, Verdict};
use crate::spectral::{
    best_wavenumber_sq, eigendecompose, helmholtz_residual_sq, shifted_apply, Laplacian,
    SpectralBasis,
};
use crate::{Error, Result};

/// Current factorization `Y ≈ D Xᵀ` and its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// Spatial modes, one per column (`n × N`).
    pub modes: DMatrix<f64>,
    /// Temporal coefficients, one per column (`m × N`).
    pub coeffs: DMatrix<f64>,
    /// Squared wavenumber of each mode, in `[0, 4]`.
    pub wavenumbers_sq: Vec<f64>,
    /// Weight of the low-rank (Frobenius) penalty.
    pub shrinkage: f64,
    /// Weight of the Helmholtz penalty.
    pub helmholtz_weight: f64,
}

impl FactorModel {
    pub fn empty(n: usize, m: usize, shrinkage: f64, helmholtz_weight: f64) -> Result<Self> {
        Self::new(
            DMatrix::zeros(n, 0),
            DMatrix::zeros(m, 0),
            Vec::new(),
            shrinkage,
            helmholtz_weight,
        )
    }

    pub fn new(
        modes: DMatrix<f64>,
        coeffs: DMatrix<f64>,
        wavenumbers_sq: Vec<f64>,
        shrinkage: f64,
        helmholtz_weight: f64,
    ) -> Result<Self> {
        let model = Self {
            modes,
            coeffs,
            wavenumbers_sq,
            shrinkage,
            helmholtz_weight,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n_modes = self.modes.ncols();
        if self.coeffs.ncols() != n_modes || self.wavenumbers_sq.len() != n_modes {
            return Err(Error::dim(format!(
                "model has {} modes, {} coefficient columns and {} wavenumbers",
                n_modes,
                self.coeffs.ncols(),
                self.wavenumbers_sq.len()
            )));
        }
        if let Some(k) = self.wavenumbers_sq.iter().find(|k| !(0.0..=4.0).contains(*k)) {
            return Err(Error::param(format!("squared wavenumber {k} outside [0, 4]")));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::param(format!("shrinkage {} must be positive", self.shrinkage)));
        }
        if !(self.helmholtz_weight >= 0.0 && self.helmholtz_weight.is_finite()) {
            return Err(Error::param(format!(
                "helmholtz weight {} must be nonnegative",
                self.helmholtz_weight
            )));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.modes * self.coeffs.transpose()
    }

    fn check_data(&self, y: &DMatrix<f64>) -> Result<()> {
        if y.nrows() != self.modes.nrows() || y.ncols() != self.coeffs.nrows() {
            return Err(Error::dim(format!(
                "data is {}x{}, model expects {}x{}",
                y.nrows(),
                y.ncols(),
                self.modes.nrows(),
                self.coeffs.nrows()
            )));
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.modes.iter().chain(self.coeffs.iter()).all(|v| v.is_finite())
    }
}

fn column(m: &DMatrix<f64>, i: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[i * n..(i + 1) * n]
}

/// Helmholtz part of the penalty for every column: `Σ dᵢᵀ A(k̄ᵢ) dᵢ`.
fn mode_penalty(model: &FactorModel) -> f64 {
    (0..model.n_modes())
        .map(|i| {
            let d = column(&model.modes, i);
            let norm_sq: f64 = d.iter().map(|v| v * v).sum();
            norm_sq + model.helmholtz_weight * helmholtz_residual_sq(d, model.wavenumbers_sq[i])
        })
        .sum()
}

fn objective_with_residual(model: &FactorModel, residual: &DMatrix<f64>) -> f64 {
    0.5 * residual.norm_squared()
        + 0.5 * model.shrinkage * (model.coeffs.norm_squared() + mode_penalty(model))
}

/// `½‖Y − DXᵀ‖²_F + (λ/2)‖X‖²_F + (λ/2) Σ dᵢᵀ A(k̄ᵢ) dᵢ`.
pub fn objective(model: &FactorModel, y: &DMatrix<f64>) -> Result<f64> {
    model.check_data(y)?;
    let residual = y - model.reconstruction();
    Ok(objective_with_residual(model, &residual))
}

/// Result of folding the wavenumber minimization into the column penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaValue {
    pub value: f64,
    pub wavenumber_sq: f64,
    /// `d` was zero, so the wavenumber is undefined and reported as 0.
    pub degenerate: bool,
}

/// `‖x‖² + min_k̄ dᵀ A(k̄) d`, with the minimizing `k̄` in closed form.
pub fn theta_bar(d: &DVector<f64>, x: &DVector<f64>, helmholtz_weight: f64) -> ThetaValue {
    let x_sq = x.norm_squared();
    match best_wavenumber_sq(d.as_slice()) {
        None => ThetaValue {
            value: x_sq,
            wavenumber_sq: 0.0,
            degenerate: true,
        },
        Some(k) => ThetaValue {
            value: x_sq
                + d.norm_squared()
                + helmholtz_weight * helmholtz_residual_sq(d.as_slice(), k),
            wavenumber_sq: k,
            degenerate: false,
        },
    }
}

/// Partial derivatives of the objective with respect to `D` and `X`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub modes: DMatrix<f64>,
    pub coeffs: DMatrix<f64>,
}

/// `(DXᵀ − Y)xᵢ + λdᵢ + γλ(L + k̄ᵢI)²dᵢ` for every mode column.
fn modes_gradient(model: &FactorModel, misfit: &DMatrix<f64>) -> DMatrix<f64> {
    let mut grad = misfit * &model.coeffs;
    let n = model.modes.nrows();
    let mut once = vec![0.0; n];
    let mut twice = vec![0.0; n];
    for i in 0..model.n_modes() {
        let d = column(&model.modes, i);
        let k = model.wavenumbers_sq[i];
        shifted_apply(d, k, &mut once);
        shifted_apply(&once, k, &mut twice);
        let mut g = grad.column_mut(i);
        for j in 0..n {
            g[j] += model.shrinkage * (d[j] + model.helmholtz_weight * twice[j]);
        }
    }
    grad
}

/// `(DXᵀ − Y)ᵀdᵢ + λxᵢ` for every coefficient column.
fn coeffs_gradient(model: &FactorModel, misfit: &DMatrix<f64>) -> DMatrix<f64> {
    misfit.tr_mul(&model.modes) + &model.coeffs * model.shrinkage
}

pub fn gradients(model: &FactorModel, y: &DMatrix<f64>) -> Result<Gradients> {
    model.check_data(y)?;
    let misfit = model.reconstruction() - y;
    Ok(Gradients {
        modes: modes_gradient(model, &misfit),
        coeffs: coeffs_gradient(model, &misfit),
    })
}

/// How a descent pass turns gradients into steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Plain gradient steps of size `alpha` under backtracking. `None` starts
    /// from `1/(‖Y‖₂² + λ(1 + 16γ))`.
    Plain { alpha: Option<f64> },
    /// Each column's gradient is divided by that column's own block
    /// curvature: `‖xᵢ‖² + λA(k̄ᵢ)` for modes and `‖dᵢ‖² + λ` for
    /// coefficients. A unit step then minimizes each column exactly when the
    /// others are held fixed; backtracking scales the step down from 1.
    CurvatureScaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Tolerance on `polar − 1`.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub step_rule: StepRule,
    /// Gradient ∞-norm threshold; `None` uses `1e-6·‖Y‖_F`.
    pub stationarity_tol: Option<f64>,
    /// Stop once this many columns exist.
    pub max_modes: Option<usize>,
    pub line_search: LineSearchConfig,
    /// Halvings allowed before a pass is declared stuck.
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            max_outer_iters: 50,
            max_inner_iters: 2000,
            step_rule: StepRule::CurvatureScaled,
            stationarity_tol: None,
            max_modes: None,
            line_search: LineSearchConfig::default(),
            max_halvings: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon must be positive"));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::param("iteration limits must be positive"));
        }
        if let Some(tol) = self.stationarity_tol {
            if !(tol > 0.0) {
                return Err(Error::param("stationarity tolerance must be positive"));
            }
        }
        if let StepRule::Plain { alpha: Some(a) } = self.step_rule {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::param("step size must be positive"));
            }
        }
        if self.max_modes == Some(0) {
            return Err(Error::param("max_modes must be positive when set"));
        }
        self.line_search.validate()
    }
}

/// Laplacian and its eigenbasis for one spatial size, built once.
#[derive(Debug, Clone)]
pub struct Operators {
    pub laplacian: Laplacian,
    pub basis: SpectralBasis,
}

impl Operators {
    pub fn new(n: usize) -> Result<Self> {
        let laplacian = Laplacian::new(n)?;
        let basis = eigendecompose(&laplacian)?;
        Ok(Self { laplacian, basis })
    }
}

/// One block descent pass: all mode columns, then all coefficient columns
/// against the updated modes, then the exact wavenumber update.
///
/// `scale` multiplies every step; for [`StepRule::Plain`] it is the step size.
pub fn block_descent_pass(
    ops: &Operators,
    model: &FactorModel,
    y: &DMatrix<f64>,
    rule: StepRule,
    scale: f64,
) -> Result<FactorModel> {
    model.check_data(y)?;
    if model.n_modes() == 0 {
        return Err(Error::Precondition("descent needs at least one column".into()));
    }
    let misfit = model.reconstruction() - y;
    let grad = modes_gradient(model, &misfit);
    let mut next = model.clone();
    let n = model.modes.nrows();

    match rule {
        StepRule::Plain { .. } => next.modes -= &grad * scale,
        StepRule::CurvatureScaled => {
            let eigvecs = ops.basis.eigenvectors();
            let eigvals = ops.basis.eigenvalues();
            let coords = eigvecs.tr_mul(&grad);
            let mut scaled = DMatrix::zeros(n, model.n_modes());
            for i in 0..model.n_modes() {
                let x_sq = model.coeffs.column(i).norm_squared();
                let k = model.wavenumbers_sq[i];
                for j in 0..n {
                    let offset = k + eigvals[j];
                    let curvature = x_sq
                        + model.shrinkage * (1.0 + model.helmholtz_weight * offset * offset);
                    scaled[(j, i)] = coords[(j, i)] / curvature;
                }
            }
            next.modes -= eigvecs * scaled * scale;
        }
    }

    let misfit = &next.modes * next.coeffs.transpose() - y;
    let grad = coeffs_gradient(&next, &misfit);
    match rule {
        StepRule::Plain { .. } => next.coeffs -= grad * scale,
        StepRule::CurvatureScaled => {
            for i in 0..next.n_modes() {
                let curvature = next.modes.column(i).norm_squared() + next.shrinkage;
                let step = grad.column(i) * (scale / curvature);
                let mut col = next.coeffs.column_mut(i);
                col -= step;
            }
        }
    }

    for i in 0..next.n_modes() {
        if let Some(k) = best_wavenumber_sq(column(&next.modes, i)) {
            next.wavenumbers_sq[i] = k;
        }
    }

    if !next.is_finite() {
        return Err(Error::DivergedStep);
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentReport {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub objective_start: f64,
    pub objective_end: f64,
}

fn gradient_inf_norm(model: &FactorModel, y: &DMatrix<f64>) -> f64 {
    let misfit = model.reconstruction() - y;
    let gm = modes_gradient(model, &misfit).amax();
    let gx = coeffs_gradient(model, &misfit).amax();
    gm.max(gx)
}

fn initial_plain_step(model: &FactorModel, y: &DMatrix<f64>) -> Result<f64> {
    let y_norm = spectral_norm(y)?;
    Ok(1.0 / (y_norm * y_norm + model.shrinkage * (1.0 + 16.0 * model.helmholtz_weight)))
}

/// Repeats descent passes with backtracking until the largest gradient
/// entry falls below the stationarity tolerance or the pass budget runs out.
pub fn descend_to_stationary(
    ops: &Operators,
    model: FactorModel,
    y: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<(FactorModel, DescentReport)> {
    model.check_data(y)?;
    let tol = cfg.stationarity_tol.unwrap_or(1e-6 * y.norm());
    let mut current = model;
    let mut value = objective(&current, y)?;
    let start = value;
    if current.n_modes() == 0 {
        return Ok((
            current,
            DescentReport {
                iterations: 0,
                converged: true,
                gradient_norm: 0.0,
                objective_start: start,
                objective_end: start,
            },
        ));
    }

    let (max_scale, mut scale) = match cfg.step_rule {
        StepRule::CurvatureScaled => (1.0, 1.0),
        StepRule::Plain { alpha } => {
            let a = match alpha {
                Some(a) => a,
                None => initial_plain_step(&current, y)?,
            };
            (a, a)
        }
    };

    let mut iterations = 0;
    let mut grad_norm = gradient_inf_norm(&current, y);
    while grad_norm >= tol && iterations < cfg.max_inner_iters {
        let mut accepted = None;
        let mut trial_scale = scale;
        for _ in 0..=cfg.max_halvings {
            match block_descent_pass(ops, &current, y, cfg.step_rule, trial_scale) {
                Ok(candidate) => {
                    let candidate_value = objective(&candidate, y)?;
                    if candidate_value <= value {
                        accepted = Some((candidate, candidate_value));
                        break;
                    }
                }
                Err(Error::DivergedStep) => {}
                Err(e) => return Err(e),
            }
            trial_scale *= 0.5;
        }
        iterations += 1;
        let Some((candidate, candidate_value)) = accepted else {
            break;
        };
        current = candidate;
        value = candidate_value;
        scale = (trial_scale * 2.0).min(max_scale);
        grad_norm = gradient_inf_norm(&current, y);
    }

    Ok((
        current,
        DescentReport {
            iterations,
            converged: grad_norm < tol,
            gradient_norm: grad_norm,
            objective_start: start,
            objective_end: value,
        },
    ))
}

/// Step length along the polar direction that minimizes the objective after
/// appending `(τd*, τx*)`. `residual_inner` is `d*ᵀ(Y − DXᵀ)x*`.
pub fn optimal_tau(
    residual_inner: f64,
    shrinkage: f64,
    d_star: &DVector<f64>,
    x_star: &DVector<f64>,
) -> Result<f64> {
    let excess = residual_inner - shrinkage;
    if excess < 0.0 {
        return Err(Error::Precondition(format!(
            "residual inner product {residual_inner} is below the shrinkage {shrinkage}"
        )));
    }
    let denom = d_star.norm() * x_star.norm();
    if denom == 0.0 {
        return Err(Error::Precondition("polar direction is zero".into()));
    }
    Ok(excess.sqrt() / denom)
}

pub fn append_mode(model: &FactorModel, polar: &PolarSolution, tau: f64) -> Result<FactorModel> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::param(format!("step {tau} must be finite and nonnegative")));
    }
    if polar.d_star.len() != model.modes.nrows() || polar.x_star.len() != model.coeffs.nrows() {
        return Err(Error::dim("polar direction does not match the model shape"));
    }
    let n_modes = model.n_modes();
    let mut next = model.clone();
    next.modes = next.modes.insert_column(n_modes, 0.0);
    next.coeffs = next.coeffs.insert_column(n_modes, 0.0);
    next.modes.set_column(n_modes, &(&polar.d_star * tau));
    next.coeffs.set_column(n_modes, &(&polar.x_star * tau));
    next.wavenumbers_sq.push(polar.k_bar_star);
    Ok(next)
}

/// Drops columns whose rank-one contribution `‖dᵢ‖‖xᵢ‖` is below `threshold`.
fn prune(model: FactorModel, threshold: f64) -> FactorModel {
    let keep: Vec<usize> = (0..model.n_modes())
        .filter(|&i| model.modes.column(i).norm() * model.coeffs.column(i).norm() >= threshold)
        .collect();
    if keep.len() == model.n_modes() {
        return model;
    }
    FactorModel {
        modes: model.modes.select_columns(&keep),
        coeffs: model.coeffs.select_columns(&keep),
        wavenumbers_sq: keep.iter().map(|&i| model.wavenumbers_sq[i]).collect(),
        ..model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `polar − 1 ≤ ε` with `|polar − 1| < ε`.
    Certified,
    /// The polar value fell below `1 − ε`.
    Undershoot,
    /// The residual is exactly zero.
    ZeroResidual,
    ModeCap,
    MaxOuterIters,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Certified => "certified",
            StopReason::Undershoot => "undershoot",
            StopReason::ZeroResidual => "zero-residual",
            StopReason::ModeCap => "mode-cap",
            StopReason::MaxOuterIters => "max-outer-iters",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuterAction {
    Append { tau: f64, objective_after: f64 },
    Stop(StopReason),
}

/// One outer iteration: descent, then the polar problem at the result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Columns present while the polar problem was solved.
    pub n_modes: usize,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub gradient_norm: f64,
    /// Objective after the descent.
    pub objective: f64,
    pub polar_value: f64,
    pub k_bar_star: f64,
    pub action: OuterAction,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<OuterRecord>,
}

impl SolverTrace {
    /// Objective values in the order they were reached: after each descent
    /// and after each append.
    pub fn objective_sequence(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for r in &self.records {
            out.push(r.objective);
            if let OuterAction::Append { objective_after, .. } = r.action {
                out.push(objective_after);
            }
        }
        out
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.records.last().and_then(|r| match r.action {
            OuterAction::Stop(reason) => Some(reason),
            OuterAction::Append { .. } => None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Factorization {
    pub model: FactorModel,
    pub trace: SolverTrace,
    pub stop: StopReason,
}

/// A solver error together with the trace recorded before it happened.
#[derive(Debug)]
pub struct SolverFailure {
    pub error: Error,
    pub trace: SolverTrace,
}

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} outer iterations)",
            self.error,
            self.trace.records.len()
        )
    }
}

impl std::error::Error for SolverFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for SolverFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            trace: SolverTrace::default(),
        }
    }
}

/// Alternates descent to stationarity with polar-guided column appends.
pub fn factorize(
    y: &DMatrix<f64>,
    cfg: &SolverConfig,
    shrinkage: f64,
    helmholtz_weight: f64,
    init: Option<FactorModel>,
) -> std::result::Result<Factorization, SolverFailure> {
    let ops = Operators::new(y.nrows())?;
    factorize_with(&ops, y, cfg, shrinkage, helmholtz_weight, init)
}

pub fn factorize_with(
    ops: &Operators,
    y: &DMatrix<f64>,
    cfg: &SolverConfig,
    shrinkage: f64,
    helmholtz_weight: f64,
    init: Option<FactorModel>,
) -> std::result::Result<Factorization, SolverFailure> {
    cfg.validate()?;
    if ops.basis.n() != y.nrows() {
        return Err(Error::dim("operators do not match the data's spatial size").into());
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::param("data contains non-finite values").into());
    }
    let mut model = match init {
        Some(mut m) => {
            m.shrinkage = shrinkage;
            m.helmholtz_weight = helmholtz_weight;
            m.validate()?;
            m.check_data(y)?;
            m
        }
        None => FactorModel::empty(y.nrows(), y.ncols(), shrinkage, helmholtz_weight)?,
    };

    let mut trace = SolverTrace::default();
    let prune_threshold = 1e-12 * y.norm();
    let fail = |error: Error, trace: &SolverTrace| SolverFailure {
        error,
        trace: trace.clone(),
    };

    for iteration in 0..cfg.max_outer_iters {
        model = prune(model, prune_threshold);
        let (descended, report) =
            descend_to_stationary(ops, model, y, cfg).map_err(|e| fail(e, &trace))?;
        model = descended;

        let residual = y - model.reconstruction();
        let z = &residual / shrinkage;
        let polar = solve_polar(&ops.basis, helmholtz_weight, &z, &cfg.line_search)
            .map_err(|e| fail(e, &trace))?;
        let mut record = OuterRecord {
            iteration,
            n_modes: model.n_modes(),
            inner_iterations: report.iterations,
            inner_converged: report.converged,
            gradient_norm: report.gradient_norm,
            objective: report.objective_end,
            polar_value: polar.value,
            k_bar_star: polar.k_bar_star,
            action: OuterAction::Stop(StopReason::MaxOuterIters),
        };

        let certificate = optimality_gap(polar.value, cfg.epsilon);
        let stop = if polar.degenerate {
            Some(StopReason::ZeroResidual)
        } else if certificate.verdict == Verdict::Optimal {
            Some(if certificate.undershoot {
                StopReason::Undershoot
            } else {
                StopReason::Certified
            })
        } else if cfg.max_modes.is_some_and(|cap| model.n_modes() >= cap) {
            Some(StopReason::ModeCap)
        } else if iteration + 1 == cfg.max_outer_iters {
            Some(StopReason::MaxOuterIters)
        } else {
            None
        };
        if let Some(reason) = stop {
            record.action = OuterAction::Stop(reason);
            trace.records.push(record);
            return Ok(Factorization {
                model,
                trace,
                stop: reason,
            });
        }

        let residual_inner = polar.d_star.dot(&(&residual * &polar.x_star));
        let tau = optimal_tau(residual_inner, shrinkage, &polar.d_star, &polar.x_star)
            .map_err(|e| fail(e, &trace))?;
        model = append_mode(&model, &polar, tau).map_err(|e| fail(e, &trace))?;
        let objective_after = objective(&model, y).map_err(|e| fail(e, &trace))?;
        record.action = OuterAction::Append {
            tau,
            objective_after,
        };
        trace.records.push(record);
    }
    unreachable!("the last outer iteration always stops")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(n: usize, m: usize, modes: usize, seed: u64) -> FactorModel {
        let f = |i: usize, j: usize, s: u64| ((i * 31 + j * 17) as f64 * 0.113 + s as f64).sin();
        FactorModel::new(
            DMatrix::from_fn(n, modes, |i, j| f(i, j, seed)),
            DMatrix::from_fn(m, modes, |i, j| f(i, j, seed + 5)),
            (0..modes).map(|i| 0.3 + 0.5 * i as f64).collect(),
            0.7,
            2.5,
        )
        .unwrap()
    }

    #[test]
    fn empty_model_objective() {
        let y = DMatrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let model = FactorModel::empty(4, 3, 1.0, 1.0).unwrap();
        assert_eq!(objective(&model, &y).unwrap(), 0.5 * y.norm_squared());
    }

    #[test]
    fn exact_helmholtz_pair_objective() {
        let ops = Operators::new(9).unwrap();
        let j = 3;
        let d = ops.basis.eigenvectors().column(j) * 2.0;
        let x = DVector::from_fn(5, |i, _| i as f64 - 1.5);
        let y = &d * x.transpose();
        let model = FactorModel::new(
            DMatrix::from_column_slice(9, 1, d.as_slice()),
            DMatrix::from_column_slice(5, 1, x.as_slice()),
            vec![-ops.basis.eigenvalues()[j]],
            0.4,
            50.0,
        )
        .unwrap();
        let expected = 0.2 * (x.norm_squared() + d.norm_squared());
        assert!((objective(&model, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_dense_evaluation() {
        let model = small_model(7, 5, 2, 1);
        let y = DMatrix::from_fn(7, 5, |i, j| (i as f64 - j as f64) * 0.3);
        let lap = Laplacian::new(7).unwrap();
        let mut expected = 0.5 * (&y - &model.modes * model.coeffs.transpose()).norm_squared();
        expected += 0.5 * model.shrinkage * model.coeffs.norm_squared();
        for i in 0..2 {
            let d = model.modes.column(i).into_owned();
            let shift = DMatrix::<f64>::identity(7, 7) * model.wavenumbers_sq[i];
            let op = lap.matrix() + shift;
            let a = DMatrix::<f64>::identity(7, 7) + &op * &op * model.helmholtz_weight;
            expected += 0.5 * model.shrinkage * d.dot(&(a * &d));
        }
        let got = objective(&model, &y).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn theta_of_eigenvector() {
        let ops = Operators::new(11).unwrap();
        let d = ops.basis.eigenvectors().column(2) * 1.7;
        let x = DVector::from_element(3, 0.5);
        let t = theta_bar(&d, &x, 80.0);
        assert!((t.value - (x.norm_squared() + d.norm_squared())).abs() < 1e-12);
        assert!((t.wavenumber_sq + ops.basis.eigenvalues()[2]).abs() < 1e-12);
        let zero = theta_bar(&DVector::zeros(11), &x, 80.0);
        assert!(zero.degenerate);
        assert_eq!(zero.value, x.norm_squared());
    }

    #[test]
    fn tau_boundaries() {
        let unit = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(optimal_tau(0.5, 0.5, &unit, &unit).unwrap(), 0.0);
        assert_eq!(optimal_tau(1.5, 0.5, &unit, &unit).unwrap(), 1.0);
        assert!(matches!(
            optimal_tau(0.4, 0.5, &unit, &unit),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn append_to_empty_and_zero_tau() {
        let y = DMatrix::from_fn(5, 4, |i, j| ((i + 2 * j) as f64).cos());
        let model = FactorModel::empty(5, 4, 0.3, 1.0).unwrap();
        let polar = PolarSolution {
            d_star: DVector::from_fn(5, |i, _| i as f64),
            x_star: DVector::from_fn(4, |i, _| 1.0 - i as f64),
            k_bar_star: 0.5,
            value: 2.0,
            degenerate: false,
            grid_error_bound: 0.0,
            evaluations: 0,
        };
        let appended = append_mode(&model, &polar, 2.0).unwrap();
        assert_eq!(appended.n_modes(), 1);
        let expected = (&polar.d_star * 2.0) * (&polar.x_star * 2.0).transpose();
        assert!((appended.reconstruction() - expected).amax() < 1e-15);
        let zero = append_mode(&model, &polar, 0.0).unwrap();
        assert_eq!(objective(&zero, &y).unwrap(), objective(&model, &y).unwrap());
    }

    #[test]
    fn zero_data_stops_immediately() {
        let y = DMatrix::zeros(6, 4);
        let out = factorize(&y, &SolverConfig::default(), 1.0, 1.0, None).unwrap();
        assert_eq!(out.model.n_modes(), 0);
        assert_eq!(out.trace.records.len(), 1);
        assert_eq!(out.stop, StopReason::ZeroResidual);
    }

    #[test]
    fn stationary_start_is_unchanged() {
        let ops = Operators::new(10).unwrap();
        let j = 4;
        let d = ops.basis.eigenvectors().column(j).into_owned();
        let x = DVector::from_fn(6, |i, _| (i as f64 * 0.9).sin());
        let shrinkage = 0.2;
        // the stationary pair for Y = d xᵀ·s along an eigenvector
        let s = 3.0;
        let y = &d * x.transpose() * s;
        let sigma = s * x.norm();
        let scale = (sigma - shrinkage).sqrt();
        let model = FactorModel::new(
            DMatrix::from_column_slice(10, 1, (&d * scale).as_slice()),
            DMatrix::from_column_slice(6, 1, (&x * (scale / x.norm())).as_slice()),
            vec![-ops.basis.eigenvalues()[j]],
            shrinkage,
            100.0,
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let (after, report) = descend_to_stationary(&ops, model.clone(), &y, &cfg).unwrap();
        assert!(report.iterations <= 1);
        assert!((after.modes - model.modes).amax() < 1e-12);
    }

    #[test]
    fn rank_one_recovery() {
        let n = 24;
        let m = 30;
        let ops = Operators::new(n).unwrap();
        let d = DVector::from_fn(n, |i, _| (2.0 * std::f64::consts::PI * (i + 1) as f64 / 25.0).sin());
        let x = DVector::from_fn(m, |i, _| (0.37 * i as f64).cos());
        let y = &d * x.transpose();
        let init = FactorModel::new(
            DMatrix::from_fn(n, 1, |i, _| 1.0 + 0.1 * i as f64),
            DMatrix::from_fn(m, 1, |i, _| 0.5 + 0.01 * i as f64),
            vec![0.0],
            0.1,
            5.0,
        )
        .unwrap();
        let cfg = SolverConfig {
            max_inner_iters: 20_000,
            ..SolverConfig::default()
        };
        let (model, _) = descend_to_stationary(&ops, init, &y, &cfg).unwrap();
        let dh = model.modes.column(0);
        let xh = model.coeffs.column(0);
        let top = spectral_norm(&y).unwrap();
        let corr = dh.dot(&(&y * xh)).abs() / (dh.norm() * xh.norm() * top);
        assert!(corr > 0.999, "correlation {corr}");
    }

    #[test]
    fn pruning_drops_dead_columns() {
        let mut model = small_model(5, 4, 3, 2);
        model.coeffs.column_mut(1).fill(0.0);
        let pruned = prune(model.clone(), 1e-9);
        assert_eq!(pruned.n_modes(), 2);
        assert_eq!(pruned.wavenumbers_sq, vec![model.wavenumbers_sq[0], model.wavenumbers_sq[2]]);
    }

    #[test]
    fn model_validation() {
        let bad = FactorModel::new(DMatrix::zeros(3, 2), DMatrix::zeros(4, 1), vec![0.0], 1.0, 1.0);
        assert!(matches!(bad, Err(Error::InvalidDimension(_))));
        let bad_k = FactorModel::new(DMatrix::zeros(3, 1), DMatrix::zeros(4, 1), vec![4.5], 1.0, 1.0);
        assert!(matches!(bad_k, Err(Error::InvalidParameter(_))));
    }
}
