//! Synthetic space-by-time datasets, SNR-controlled noise, and the
//! hyperparameter rules used by the benchmarks.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{rank_tolerance, singular_values};
use crate::{Error, Result};

/// Slack for floor divisions such as `2 / 0.0005` that land a hair below an
/// integer in floating point.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub delta_l: f64,
    pub length_l: f64,
    pub delta_t: f64,
    pub length_t: f64,
    pub n_d: usize,
    pub n_t: usize,
}

impl Grid {
    pub fn new(delta_l: f64, length_l: f64, delta_t: f64, length_t: f64) -> Result<Self> {
        for (name, v) in [
            ("delta_l", delta_l),
            ("length_l", length_l),
            ("delta_t", delta_t),
            ("length_t", length_t),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} = {v} must be positive")));
            }
        }
        let n_d = (length_l / delta_l + FLOOR_SLACK).floor() as usize;
        let n_t = (length_t / delta_t + FLOOR_SLACK).floor() as usize;
        if n_d == 0 || n_t == 0 {
            return Err(Error::dim(format!(
                "grid has {n_d} spatial and {n_t} temporal samples"
            )));
        }
        Ok(Self {
            delta_l,
            length_l,
            delta_t,
            length_t,
            n_d,
            n_t,
        })
    }

    /// Sample positions `j·Δℓ` for `j = 1..=n_d`. Points within `1e-9` of `L`
    /// snap to `L`.
    pub fn positions(&self) -> Vec<f64> {
        (1..=self.n_d)
            .map(|j| {
                let l = j as f64 * self.delta_l;
                if (l - self.length_l).abs() < 1e-9 {
                    self.length_l
                } else {
                    l
                }
            })
            .collect()
    }

    /// Sample times `j·Δt` for `j = 0..n_t`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_t).map(|j| j as f64 * self.delta_t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Homogeneous,
    Inhomogeneous,
    Traveling,
    Segmented,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Homogeneous,
        DatasetKind::Inhomogeneous,
        DatasetKind::Traveling,
        DatasetKind::Segmented,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Homogeneous => "homogeneous",
            DatasetKind::Inhomogeneous => "inhomogeneous",
            DatasetKind::Traveling => "traveling",
            DatasetKind::Segmented => "segmented",
        }
    }

    /// Bandwidth multiplier for [`gamma_rule`].
    pub fn default_delta(&self) -> f64 {
        match self {
            DatasetKind::Homogeneous => 100.0,
            _ => 1.0,
        }
    }

    /// Lowest SNR (dB) used for this dataset in the reference results.
    pub fn lowest_reference_snr_db(&self) -> f64 {
        match self {
            DatasetKind::Homogeneous => -11.84,
            DatasetKind::Inhomogeneous => -13.09,
            DatasetKind::Traveling => -11.73,
            DatasetKind::Segmented => -11.56,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "homogeneous" => Ok(DatasetKind::Homogeneous),
            "inhomogeneous" | "non-homogeneous" => Ok(DatasetKind::Inhomogeneous),
            "traveling" | "travelling" => Ok(DatasetKind::Traveling),
            "segmented" => Ok(DatasetKind::Segmented),
            other => Err(Error::param(format!("unknown dataset kind '{other}'"))),
        }
    }
}

/// Which spatial grid to use for the three single-medium datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPreset {
    /// Spacing exactly as listed in the reference parameter table: 11
    /// spatial samples for every single-medium dataset.
    Printed,
    /// One tenth of the listed spacing, giving 110 samples. The segmented
    /// dataset is the same under both presets.
    Dense,
}

impl GridPreset {
    pub fn as_str(&self) -> &'static str {
        match self {
            GridPreset::Printed => "printed",
            GridPreset::Dense => "dense",
        }
    }
}

impl FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(GridPreset::Printed),
            "dense" => Ok(GridPreset::Dense),
            other => Err(Error::param(format!("unknown grid preset '{other}'"))),
        }
    }
}

impl Grid {
    pub fn preset(kind: DatasetKind, preset: GridPreset) -> Self {
        let refine = match preset {
            GridPreset::Printed => 1.0,
            GridPreset::Dense => 10.0,
        };
        let grid = match kind {
            DatasetKind::Homogeneous => Grid::new(0.0901 / refine, 1.0, 0.0005, 2.0),
            DatasetKind::Inhomogeneous | DatasetKind::Traveling => {
                Grid::new(0.901 / refine, 10.0, 0.0005, 2.0)
            }
            DatasetKind::Segmented => Grid::new(0.01, 2.0, 0.02, 10.0),
        };
        grid.expect("preset grids are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub kind: DatasetKind,
    pub n_modes: usize,
    /// Temporal decay rate per mode.
    pub alpha: Vec<f64>,
    /// Spatial decay rate per mode.
    pub beta: Vec<f64>,
    /// Angular wavenumber per mode, in radians per physical length.
    pub k: Vec<f64>,
    /// Angular frequency per mode.
    pub omega: Vec<f64>,
    /// Weight of the sine part of each temporal factor.
    pub a: Vec<f64>,
    /// Weight of the cosine part of each temporal factor.
    pub b: Vec<f64>,
    pub delta: f64,
    pub seed: u64,
}

/// Wavenumbers of the first four modes of the two-segment string.
pub fn segmented_wavenumbers() -> [f64; 4] {
    let root = |sign: f64| ((13.0 + sign * 4.0 * 10f64.sqrt()) / 3.0).sqrt().atan();
    let (small, large) = (root(-1.0), root(1.0));
    let mut k = [
        2.0 * PI - large,
        2.0 * PI - small,
        2.0 * PI + small,
        2.0 * PI + large,
    ];
    k.sort_by(f64::total_cmp);
    k
}

/// Derives an independent stream seed so parameter draws and noise draws
/// never share a generator.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PARAM_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

impl GeneratorParams {
    /// Reference parameters for `kind`. With `randomize_mixing`, the temporal
    /// weights `a`, `b` are drawn uniformly from `[-1, 1]`; otherwise `a = 1`
    /// and `b = 0`.
    pub fn reference(kind: DatasetKind, seed: u64, randomize_mixing: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PARAM_STREAM));
        let n_modes = match kind {
            DatasetKind::Segmented => 4,
            _ => 6,
        };
        let idx: Vec<f64> = (1..=n_modes).map(|n| n as f64).collect();
        let (alpha, beta, k, omega) = match kind {
            DatasetKind::Homogeneous | DatasetKind::Traveling => {
                let k: Vec<f64> = idx.iter().map(|n| n * PI).collect();
                (
                    idx.iter().map(|n| n / 2.0).collect(),
                    vec![0.0; n_modes],
                    k.clone(),
                    k.iter().map(|k| 106.0 * k).collect(),
                )
            }
            DatasetKind::Inhomogeneous => {
                let k: Vec<f64> = idx.iter().map(|n| n * PI).collect();
                (
                    vec![0.0; n_modes],
                    idx.iter()
                        .map(|n| (4.0 + n) / 10.0 + rng.random::<f64>())
                        .collect(),
                    k.clone(),
                    k.iter().map(|k| 106.0 * k).collect(),
                )
            }
            DatasetKind::Segmented => {
                let k = segmented_wavenumbers().to_vec();
                (
                    vec![0.0; n_modes],
                    vec![0.0; n_modes],
                    k.clone(),
                    k.iter().map(|k| 3.0 * k).collect(),
                )
            }
        };
        let (a, b) = if randomize_mixing {
            let a = (0..n_modes).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let b = (0..n_modes).map(|_| rng.random_range(-1.0..=1.0)).collect();
            (a, b)
        } else {
            (vec![1.0; n_modes], vec![0.0; n_modes])
        };
        Self {
            kind,
            n_modes,
            alpha,
            beta,
            k,
            omega,
            a,
            b,
            delta: kind.default_delta(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_modes;
        for (name, len) in [
            ("alpha", self.alpha.len()),
            ("beta", self.beta.len()),
            ("k", self.k.len()),
            ("omega", self.omega.len()),
            ("a", self.a.len()),
            ("b", self.b.len()),
        ] {
            if len != n {
                return Err(Error::dim(format!("{name} has {len} entries, expected {n}")));
            }
        }
        if n == 0 {
            return Err(Error::dim("generator needs at least one mode"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::param("delta must be positive"));
        }
        Ok(())
    }

    /// Number of ground-truth spatial modes the generator stores.
    pub fn truth_count(&self) -> usize {
        match self.kind {
            DatasetKind::Homogeneous | DatasetKind::Inhomogeneous => self.n_modes,
            DatasetKind::Traveling | DatasetKind::Segmented => 2 * self.n_modes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n_d × n_t`, rows are space.
    pub y: DMatrix<f64>,
    /// Sampled true spatial modes, one per column.
    pub truth: DMatrix<f64>,
    pub grid: Grid,
    pub params: GeneratorParams,
    /// `f64::INFINITY` for noiseless data.
    pub snr_db: f64,
}

fn check_kind(params: &GeneratorParams, kind: DatasetKind) -> Result<()> {
    params.validate()?;
    if params.kind != kind {
        return Err(Error::param(format!(
            "parameters are for {}, generator is {}",
            params.kind, kind
        )));
    }
    Ok(())
}

/// Sum of separable standing waves `e^{-βℓ} sin(kℓ) · e^{-αt}(a sin ωt + b cos ωt)`.
fn standing_waves(grid: &Grid, params: &GeneratorParams) -> Dataset {
    let ls = grid.positions();
    let ts = grid.times();
    let truth = DMatrix::from_fn(grid.n_d, params.n_modes, |j, n| {
        (-params.beta[n] * ls[j]).exp() * (params.k[n] * ls[j]).sin()
    });
    let temporal = DMatrix::from_fn(grid.n_t, params.n_modes, |j, n| {
        let t = ts[j];
        let w = params.omega[n] * t;
        (-params.alpha[n] * t).exp() * (params.a[n] * w.sin() + params.b[n] * w.cos())
    });
    Dataset {
        y: &truth * temporal.transpose(),
        truth,
        grid: *grid,
        params: params.clone(),
        snr_db: f64::INFINITY,
    }
}

/// Decaying standing waves on a uniform string.
pub fn gen_homogeneous(grid: &Grid, params: &GeneratorParams) -> Result<Dataset> {
    check_kind(params, DatasetKind::Homogeneous)?;
    Ok(standing_waves(grid, params))
}

/// Standing waves whose amplitude decays along the string.
pub fn gen_inhomogeneous(grid: &Grid, params: &GeneratorParams) -> Result<Dataset> {
    check_kind(params, DatasetKind::Inhomogeneous)?;
    Ok(standing_waves(grid, params))
}

/// Decaying plane waves `e^{-αt} sin(kℓ + ωt)`. Each wave is stored as two
/// standing-wave truth modes, `sin(kℓ)` then `cos(kℓ)`.
pub fn gen_traveling(grid: &Grid, params: &GeneratorParams) -> Result<Dataset> {
    check_kind(params, DatasetKind::Traveling)?;
    let ls = grid.positions();
    let ts = grid.times();
    let y = DMatrix::from_fn(grid.n_d, grid.n_t, |j, i| {
        (0..params.n_modes)
            .map(|n| (-params.alpha[n] * ts[i]).exp() * (params.k[n] * ls[j] + params.omega[n] * ts[i]).sin())
            .sum()
    });
    let truth = DMatrix::from_fn(grid.n_d, 2 * params.n_modes, |j, c| {
        let phase = params.k[c / 2] * ls[j];
        if c % 2 == 0 {
            phase.sin()
        } else {
            phase.cos()
        }
    });
    Ok(Dataset {
        y,
        truth,
        grid: *grid,
        params: params.clone(),
        snr_db: f64::INFINITY,
    })
}

/// Spatial shape of the `i`-th mode in each half of the two-segment string,
/// zero outside its own half. The left half (`ℓ ≤ 1`) oscillates three times
/// faster in space; the right half is anchored at `ℓ = 2` and scaled to meet
/// the left half at the junction.
fn segmented_shapes(k: f64, l: f64) -> (f64, f64) {
    const JUNCTION: f64 = 1.0;
    if l <= JUNCTION + 1e-9 {
        ((3.0 * k * l).sin(), 0.0)
    } else {
        let scale = (3.0 * k).sin() / k.sin();
        (0.0, scale * (k * (2.0 - l)).sin())
    }
}

/// Standing waves on a string of two media with a 9:1 density ratio. The
/// truth holds the four left-half modes followed by the four right-half
/// modes.
pub fn gen_segmented(grid: &Grid, params: &GeneratorParams) -> Result<Dataset> {
    check_kind(params, DatasetKind::Segmented)?;
    let ls = grid.positions();
    let ts = grid.times();
    let n = params.n_modes;
    let truth = DMatrix::from_fn(grid.n_d, 2 * n, |j, c| {
        let (left, right) = segmented_shapes(params.k[c % n], ls[j]);
        if c < n {
            left
        } else {
            right
        }
    });
    // the right half runs three times slower in time
    let temporal = DMatrix::from_fn(grid.n_t, 2 * n, |j, c| {
        let w = params.omega[c % n] * ts[j];
        let w = if c < n { w } else { w / 3.0 };
        params.a[c % n] * w.sin() + params.b[c % n] * w.cos()
    });
    Ok(Dataset {
        y: &truth * temporal.transpose(),
        truth,
        grid: *grid,
        params: params.clone(),
        snr_db: f64::INFINITY,
    })
}

pub fn generate(grid: &Grid, params: &GeneratorParams) -> Result<Dataset> {
    match params.kind {
        DatasetKind::Homogeneous => gen_homogeneous(grid, params),
        DatasetKind::Inhomogeneous => gen_inhomogeneous(grid, params),
        DatasetKind::Traveling => gen_traveling(grid, params),
        DatasetKind::Segmented => gen_segmented(grid, params),
    }
}

/// White Gaussian noise rescaled so that signal power over noise power is
/// exactly `10^(snr_db/10)`.
pub fn add_noise(dataset: &Dataset, snr_db: f64, seed: u64) -> Result<Dataset> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::param(format!("snr {snr_db} dB is not usable")));
    }
    let mut out = dataset.clone();
    if snr_db == f64::INFINITY {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));
    let noise = DMatrix::<f64>::from_fn(dataset.y.nrows(), dataset.y.ncols(), |_, _| {
        rng.sample(StandardNormal)
    });
    let signal_power = dataset.y.norm_squared();
    let noise_power = noise.norm_squared();
    let ratio = 10f64.powf(snr_db / 10.0);
    let scale = (signal_power / (ratio * noise_power)).sqrt();
    out.y += noise * scale;
    out.snr_db = snr_db;
    Ok(out)
}

/// `10·log10(‖signal‖² / ‖noisy − signal‖²)`.
pub fn realized_snr_db(signal: &DMatrix<f64>, noisy: &DMatrix<f64>) -> f64 {
    10.0 * (signal.norm_squared() / (noisy - signal).norm_squared()).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageChoice {
    pub value: f64,
    /// The data had fewer than the requested number of nonzero singular
    /// values; the last nonzero one was used.
    pub rank_deficient: bool,
}

/// `0.75·σ_N(Y)`, the soft threshold that keeps `N` singular values.
pub fn lambda_rule(y: &DMatrix<f64>, n: usize) -> Result<ShrinkageChoice> {
    if n == 0 {
        return Err(Error::param("mode count must be positive"));
    }
    if y.is_empty() {
        return Err(Error::dim("data matrix is empty"));
    }
    let sv = singular_values(y)?;
    let tol = rank_tolerance(sv[0], y.nrows(), y.ncols());
    let rank = sv.iter().take_while(|&&s| s > tol).count();
    if rank == 0 {
        return Err(Error::param("data matrix is zero"));
    }
    let rank_deficient = rank < n;
    let index = n.min(rank) - 1;
    Ok(ShrinkageChoice {
        value: 0.75 * sv[index],
        rank_deficient,
    })
}

/// `δ·(M/π)²`: the weight whose filter passband spans a fixed number of
/// Laplacian eigenvalues.
pub fn gamma_rule(m: usize, delta: f64) -> Result<f64> {
    if m == 0 || !(delta > 0.0) {
        return Err(Error::param("gamma rule needs M ≥ 1 and δ > 0"));
    }
    let r = m as f64 / PI;
    Ok(delta * r * r)
}

/// Squared wavenumber on the unit grid of a sampled `sin(kℓ)`: the negated
/// eigenvalue the discrete Laplacian assigns to it.
pub fn unit_grid_wavenumber_sq(k: f64, delta_l: f64) -> f64 {
    let s = (k * delta_l / 2.0).sin();
    4.0 * s * s
}
