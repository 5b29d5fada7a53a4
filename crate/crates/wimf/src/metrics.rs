//! Mode matching, error measures, the PCA baseline and Monte-Carlo runs.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::datagen::{
    add_noise, gamma_rule, generate, lambda_rule, DatasetKind, GeneratorParams, Grid, GridPreset,
};
use crate::linalg::{left_singular_vectors, rank_tolerance};
use crate::solver::{factorize_with, Operators, SolverConfig, SolverTrace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedPair {
    pub recovered: usize,
    pub truth: usize,
    /// Sign of the inner product, `+1` or `-1`.
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModeMatch {
    /// One entry per matched recovered mode, in matching order.
    pub pairs: Vec<MatchedPair>,
    /// Recovered columns with zero norm.
    pub zero_columns: Vec<usize>,
}

impl ModeMatch {
    pub fn truth_for(&self, recovered: usize) -> Option<&MatchedPair> {
        self.pairs.iter().find(|p| p.recovered == recovered)
    }
}

fn check_rows(recovered: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<()> {
    if recovered.nrows() != truth.nrows() {
        return Err(Error::dim(format!(
            "recovered modes have {} rows, truth has {}",
            recovered.nrows(),
            truth.nrows()
        )));
    }
    Ok(())
}

/// Greedy matching without replacement. Recovered modes are visited in order
/// of decreasing norm; each takes the free truth mode with the largest
/// absolute normalized correlation. Surplus modes on either side stay
/// unmatched.
pub fn match_modes(recovered: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<ModeMatch> {
    check_rows(recovered, truth)?;
    let norms: Vec<f64> = recovered.column_iter().map(|c| c.norm()).collect();
    let truth_norms: Vec<f64> = truth.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..recovered.ncols()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut taken = vec![false; truth.ncols()];
    let mut out = ModeMatch::default();
    for r in order {
        if norms[r] == 0.0 {
            out.zero_columns.push(r);
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for t in (0..truth.ncols()).filter(|&t| !taken[t]) {
            let inner = recovered.column(r).dot(&truth.column(t));
            let denom = norms[r] * truth_norms[t];
            let corr = if denom > 0.0 { (inner / denom).abs() } else { 0.0 };
            if best.is_none_or(|(_, c, _)| corr > c) {
                best = Some((t, corr, inner));
            }
        }
        let Some((t, _, inner)) = best else { break };
        taken[t] = true;
        out.pairs.push(MatchedPair {
            recovered: r,
            truth: t,
            sign: if inner < 0.0 { -1 } else { 1 },
        });
    }
    Ok(out)
}

fn normalized(col: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let norm = col.clone().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        col.map(|_| 0.0).collect()
    } else {
        col.map(|v| v / norm).collect()
    }
}

fn pair_errors(
    recovered: &[Vec<f64>],
    truth: &[Vec<f64>],
    matching: &ModeMatch,
    use_sign: bool,
) -> Vec<f64> {
    matching
        .pairs
        .iter()
        .map(|p| {
            let r = &recovered[p.recovered];
            let t = &truth[p.truth];
            let c = if use_sign { p.sign as f64 } else { 1.0 };
            r.iter().zip(t).map(|(a, b)| (a - c * b).powi(2)).sum()
        })
        .collect()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| normalized(c.iter().copied())).collect()
}

fn check_match(recovered: &DMatrix<f64>, truth: &DMatrix<f64>, matching: &ModeMatch) -> Result<()> {
    check_rows(recovered, truth)?;
    for p in &matching.pairs {
        if p.recovered >= recovered.ncols() || p.truth >= truth.ncols() {
            return Err(Error::dim("match refers to a column that does not exist"));
        }
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Squared error of each matched pair after unit normalization and sign
/// correction.
pub fn per_mode_errors(
    recovered: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    matching: &ModeMatch,
) -> Result<Vec<f64>> {
    check_match(recovered, truth, matching)?;
    Ok(pair_errors(&columns(recovered), &columns(truth), matching, true))
}

/// Mean over matched pairs of `‖d/‖d‖ − c·t/‖t‖‖²`.
pub fn mode_mse(recovered: &DMatrix<f64>, truth: &DMatrix<f64>, matching: &ModeMatch) -> Result<f64> {
    Ok(mean(&per_mode_errors(recovered, truth, matching)?))
}

/// Unit-norm DFT magnitudes of every column, transformed at length
/// `padding × rows` with trailing zeros.
fn magnitude_spectra(m: &DMatrix<f64>, padding: usize) -> Vec<Vec<f64>> {
    let len = m.nrows() * padding.max(1);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len.max(1));
    m.column_iter()
        .map(|col| {
            let mut buf: Vec<Complex<f64>> = (0..len)
                .map(|i| Complex::new(col.get(i).copied().unwrap_or(0.0), 0.0))
                .collect();
            fft.process(&mut buf);
            normalized(buf.iter().map(|c| c.norm()))
        })
        .collect()
}

pub fn per_mode_fourier_errors(
    recovered: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    matching: &ModeMatch,
    padding: usize,
) -> Result<Vec<f64>> {
    check_match(recovered, truth, matching)?;
    Ok(pair_errors(
        &magnitude_spectra(recovered, padding),
        &magnitude_spectra(truth, padding),
        matching,
        false,
    ))
}

/// Same as [`mode_mse`] on unit-norm DFT magnitude spectra.
pub fn fourier_mse(
    recovered: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    matching: &ModeMatch,
    padding: usize,
) -> Result<f64> {
    Ok(mean(&per_mode_fourier_errors(recovered, truth, matching, padding)?))
}

/// Leading `n` left singular vectors of `y`, first nonzero entry positive.
/// Returns the modes and whether zero columns had to be padded in.
pub fn pca_baseline(y: &DMatrix<f64>, n: usize) -> Result<(DMatrix<f64>, bool)> {
    if y.is_empty() {
        return Err(Error::dim("data matrix is empty"));
    }
    let (vectors, values) = left_singular_vectors(y, n)?;
    let tol = rank_tolerance(values.first().copied().unwrap_or(0.0), y.nrows(), y.ncols());

    let mut out = DMatrix::zeros(y.nrows(), n);
    let mut padded = false;
    for (dst, (mut col, sigma)) in vectors.into_iter().zip(values.iter()).enumerate() {
        if *sigma <= tol {
            padded = true;
            continue;
        }
        let scale = col.amax();
        if col.iter().find(|v| v.abs() > 1e-12 * scale).is_some_and(|v| *v < 0.0) {
            col.neg_mut();
        }
        out.set_column(dst, &col);
    }
    padded |= n > values.len();
    Ok((out, padded))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let m = mean(values);
        let std = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
            var.sqrt()
        };
        Self { mean: m, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Wimf(SolverConfig),
    Pca,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Wimf(_) => "wimf",
            Method::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloTask {
    pub kind: DatasetKind,
    pub grid: GridPreset,
    pub snr_db: f64,
    pub trials: usize,
    /// Trial `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    pub randomize_mixing: bool,
    /// Bandwidth multiplier; `None` uses the dataset's default.
    pub delta: Option<f64>,
    pub fourier_padding: usize,
    pub method: Method,
}

impl MonteCarloTask {
    pub fn new(kind: DatasetKind, snr_db: f64, trials: usize, base_seed: u64, method: Method) -> Self {
        Self {
            kind,
            grid: GridPreset::Dense,
            snr_db,
            trials,
            base_seed,
            randomize_mixing: false,
            delta: None,
            fourier_padding: 1,
            method,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialMetrics {
    pub mse: f64,
    pub fourier_mse: f64,
    pub per_mode: Vec<f64>,
    pub per_mode_fourier: Vec<f64>,
    pub n_recovered: usize,
    pub shrinkage: Option<f64>,
    pub helmholtz_weight: Option<f64>,
    pub trace: Option<SolverTrace>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub seed: u64,
    pub result: std::result::Result<TrialMetrics, String>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub dataset: DatasetKind,
    pub snr_db: f64,
    pub method: &'static str,
    pub trials: Vec<TrialOutcome>,
    /// Aggregates over successful trials only.
    pub mse: Summary,
    pub fourier_mse: Summary,
    pub failed: usize,
}

impl EvalReport {
    pub fn succeeded(&self) -> usize {
        self.trials.len() - self.failed
    }

    fn aggregate(dataset: DatasetKind, snr_db: f64, method: &'static str, trials: Vec<TrialOutcome>) -> Self {
        let ok: Vec<&TrialMetrics> = trials.iter().filter_map(|t| t.result.as_ref().ok()).collect();
        let mse: Vec<f64> = ok.iter().map(|t| t.mse).collect();
        let fmse: Vec<f64> = ok.iter().map(|t| t.fourier_mse).collect();
        let failed = trials.len() - ok.len();
        Self {
            dataset,
            snr_db,
            method,
            mse: Summary::of(&mse),
            fourier_mse: Summary::of(&fmse),
            failed,
            trials,
        }
    }
}

/// Scores recovered modes against the truth for one trial.
pub fn score(recovered: &DMatrix<f64>, truth: &DMatrix<f64>, padding: usize) -> Result<TrialMetrics> {
    let matching = match_modes(recovered, truth)?;
    let per_mode = per_mode_errors(recovered, truth, &matching)?;
    let per_mode_fourier = per_mode_fourier_errors(recovered, truth, &matching, padding)?;
    Ok(TrialMetrics {
        mse: mean(&per_mode),
        fourier_mse: mean(&per_mode_fourier),
        per_mode,
        per_mode_fourier,
        n_recovered: recovered.ncols(),
        shrinkage: None,
        helmholtz_weight: None,
        trace: None,
    })
}

fn run_trial(task: &MonteCarloTask, seed: u64, ops: &mut Option<Operators>) -> Result<TrialMetrics> {
    let grid = Grid::preset(task.kind, task.grid);
    let mut params = GeneratorParams::reference(task.kind, seed, task.randomize_mixing);
    if let Some(delta) = task.delta {
        params.delta = delta;
    }
    let clean = generate(&grid, &params)?;
    let data = add_noise(&clean, task.snr_db, seed)?;
    let n_truth = params.truth_count();
    match &task.method {
        Method::Pca => {
            let (modes, _) = pca_baseline(&data.y, n_truth)?;
            score(&modes, &data.truth, task.fourier_padding)
        }
        Method::Wimf(base) => {
            let shrinkage = lambda_rule(&data.y, n_truth)?.value;
            let weight = gamma_rule(grid.n_d, params.delta)?;
            let cfg = SolverConfig {
                max_modes: Some(base.max_modes.unwrap_or(n_truth)),
                ..base.clone()
            };
            if ops.as_ref().is_none_or(|o| o.basis.n() != grid.n_d) {
                *ops = Some(Operators::new(grid.n_d)?);
            }
            let ops = ops.as_ref().expect("operators were just built");
            let out = factorize_with(ops, &data.y, &cfg, shrinkage, weight, None)
                .map_err(|f| f.error)?;
            let mut metrics = score(&out.model.modes, &data.truth, task.fourier_padding)?;
            metrics.shrinkage = Some(shrinkage);
            metrics.helmholtz_weight = Some(weight);
            metrics.trace = Some(out.trace);
            Ok(metrics)
        }
    }
}

/// Generates, perturbs, factorizes and scores `trials` datasets on the rayon
/// pool. Failed trials are kept in the report and left out of the aggregates.
pub fn monte_carlo(task: &MonteCarloTask) -> Result<EvalReport> {
    if task.trials == 0 {
        return Err(Error::param("trials must be at least 1"));
    }
    let trials = (0..task.trials as u64)
        .into_par_iter()
        .map_init(
            || None,
            |ops, i| {
                let seed = task.base_seed.wrapping_add(i);
                TrialOutcome {
                    seed,
                    result: run_trial(task, seed, ops).map_err(|e| e.to_string()),
                }
            },
        )
        .collect();
    Ok(EvalReport::aggregate(task.kind, task.snr_db, task.method.name(), trials))
}
