use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wimf::io::{parse_f64, KeyValues};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "wimf",
    version,
    about = "Wave-informed matrix factorization experiments",
    args_override_self = true
)]
struct Cli {
    /// Worker threads for parallel work (defaults to all cores).
    #[arg(long, global = true, env = "WIMF_THREADS")]
    threads: Option<usize>,

    /// Replay a `config.cfg` written by an earlier run. Flags given on the
    /// command line take precedence over the file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: Y.csv, truth.csv and meta.cfg.
    Generate(GenerateArgs),
    /// Factorize a data matrix: D.csv, X.csv, k.csv and trace.csv.
    Factorize(FactorizeArgs),
    /// Score recovered modes against the truth: report.csv.
    Evaluate(EvaluateArgs),
    /// Tabulate the band-pass coefficient at every Laplacian eigenvalue.
    FilterResponse(FilterArgs),
    /// Monte-Carlo comparison of WIMF and PCA: benchmark.csv and trials.csv.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug, Clone)]
struct OutArg {
    /// Output directory, created if missing.
    #[arg(long, env = "WIMF_OUT", default_value = "wimf-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Homogeneous,
    Inhomogeneous,
    Traveling,
    Segmented,
}

impl From<Kind> for wimf::datagen::DatasetKind {
    fn from(k: Kind) -> Self {
        use wimf::datagen::DatasetKind as D;
        match k {
            Kind::Homogeneous => D::Homogeneous,
            Kind::Inhomogeneous => D::Inhomogeneous,
            Kind::Traveling => D::Traveling,
            Kind::Segmented => D::Segmented,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridChoice {
    /// One tenth of the reference spacing (110 spatial samples).
    Dense,
    /// The reference spacing as listed (11 spatial samples).
    Printed,
}

impl From<GridChoice> for wimf::datagen::GridPreset {
    fn from(g: GridChoice) -> Self {
        match g {
            GridChoice::Dense => wimf::datagen::GridPreset::Dense,
            GridChoice::Printed => wimf::datagen::GridPreset::Printed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StepChoice {
    /// Per-column curvature scaling with backtracking.
    Curvature,
    /// Plain gradient steps with backtracking.
    Plain,
}

/// A signal-to-noise ratio in dB, `inf` for noiseless, or `lowest` for the
/// dataset's lowest reference level.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Snr {
    Db(f64),
    Lowest,
}

fn parse_snr(s: &str) -> Result<Snr, String> {
    if s.trim() == "lowest" {
        return Ok(Snr::Lowest);
    }
    match parse_f64(s) {
        Some(v) if !v.is_nan() && v != f64::NEG_INFINITY => Ok(Snr::Db(v)),
        _ => Err(format!("'{s}' is not a dB value, 'inf' or 'lowest'")),
    }
}

fn parse_finite(s: &str) -> Result<f64, String> {
    match parse_f64(s) {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(format!("'{s}' is not a finite number")),
    }
}

#[derive(Args, Debug, Clone)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, value_enum, default_value = "dense")]
    grid: GridChoice,
    /// SNR in dB, or `inf` for noiseless data.
    #[arg(long, default_value = "inf", value_parser = parse_snr, allow_negative_numbers = true)]
    snr: Snr,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bandwidth multiplier stored with the dataset (default depends on kind).
    #[arg(long, value_parser = parse_finite)]
    delta: Option<f64>,
    /// Draw the temporal sine/cosine weights uniformly from [-1, 1].
    #[arg(long)]
    randomize_mixing: bool,
    /// Override the spatial spacing.
    #[arg(long, value_parser = parse_finite)]
    delta_l: Option<f64>,
    /// Override the spatial length.
    #[arg(long, value_parser = parse_finite)]
    length_l: Option<f64>,
    /// Override the time step.
    #[arg(long, value_parser = parse_finite)]
    delta_t: Option<f64>,
    /// Override the time span.
    #[arg(long, value_parser = parse_finite)]
    length_t: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Tolerance on the polar value above 1.
    #[arg(long, default_value_t = 1e-2, value_parser = parse_finite)]
    epsilon: f64,
    /// Stop once this many modes exist.
    #[arg(long)]
    max_modes: Option<usize>,
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    #[arg(long, default_value_t = 2000)]
    max_inner: usize,
    #[arg(long, value_enum, default_value = "curvature")]
    step_rule: StepChoice,
    /// Initial step size for `--step-rule plain`.
    #[arg(long, value_parser = parse_finite)]
    step_size: Option<f64>,
    /// Gradient infinity-norm threshold (default 1e-6 times the data norm).
    #[arg(long, value_parser = parse_finite)]
    stationarity_tol: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct FactorizeArgs {
    /// Directory holding Y.csv and, optionally, meta.cfg.
    #[arg(long)]
    input: PathBuf,
    /// Shrinkage weight (default 0.75 times the N-th singular value).
    #[arg(long, value_parser = parse_finite)]
    lambda: Option<f64>,
    /// Helmholtz weight (default delta * (rows / pi)^2).
    #[arg(long, value_parser = parse_finite)]
    gamma: Option<f64>,
    /// Bandwidth multiplier for the default Helmholtz weight.
    #[arg(long, value_parser = parse_finite)]
    delta: Option<f64>,
    /// Mode count N for the default shrinkage (default: max-modes, then the
    /// truth count in meta.cfg).
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Clone)]
struct EvaluateArgs {
    /// Recovered modes, one per column.
    #[arg(long)]
    recovered: PathBuf,
    /// Ground-truth modes, one per column.
    #[arg(long)]
    truth: PathBuf,
    /// Zero-padding factor for the Fourier magnitude error.
    #[arg(long, default_value_t = 1)]
    padding: usize,
    /// Dataset label for the report (default: from meta.cfg next to the truth).
    #[arg(long)]
    dataset: Option<String>,
    /// SNR label for the report (default: from meta.cfg next to the truth).
    #[arg(long, value_parser = parse_snr, allow_negative_numbers = true)]
    snr: Option<Snr>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Clone)]
struct FilterArgs {
    /// Center of the passband (squared wavenumber on the unit grid, 0 to 4).
    #[arg(long, value_parser = parse_finite, allow_negative_numbers = true)]
    k_bar: f64,
    #[arg(long, value_parser = parse_finite)]
    gamma: f64,
    /// Laplacian size whose eigenvalues are tabulated.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug, Clone)]
struct BenchmarkArgs {
    /// Dataset kinds (comma separated; default all).
    #[arg(long, value_enum, value_delimiter = ',')]
    kind: Vec<Kind>,
    /// SNR levels (comma separated dB values, `inf`, or `lowest`).
    #[arg(long, value_delimiter = ',', value_parser = parse_snr, default_value = "lowest,inf", allow_negative_numbers = true)]
    snr: Vec<Snr>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "dense")]
    grid: GridChoice,
    /// Bandwidth multiplier for every kind (default depends on kind).
    #[arg(long, value_parser = parse_finite)]
    delta: Option<f64>,
    #[arg(long)]
    randomize_mixing: bool,
    #[arg(long, default_value_t = 1)]
    padding: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArg,
}

/// Failure of a command together with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<wimf::Error> for Failure {
    fn from(e: wimf::Error) -> Self {
        use wimf::Error as E;
        let code = match e {
            E::InvalidParameter(_) => 1,
            E::NumericalFailure { .. } | E::DivergedStep => 3,
            E::InvalidDimension(_) | E::Precondition(_) | E::Io { .. } | E::Parse { .. } => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Splices the `key = value` pairs of a `--config` file into the argument
/// list right after the subcommand, so later command-line flags win.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, Failure> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, consumed) = match args[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => match args.get(pos + 1) {
            Some(p) => (p.clone(), 2),
            None => return Err(Failure::usage("--config needs a file")),
        },
    };
    let mut rest: Vec<String> = args[..pos].to_vec();
    rest.extend(args[pos + consumed..].iter().cloned());
    let kv = KeyValues::read(Path::new(&path))?;

    let command = kv
        .get("command")
        .ok_or_else(|| Failure::usage(format!("{path}: missing 'command'")))?
        .to_string();
    let names = ["generate", "factorize", "evaluate", "filter-response", "benchmark"];
    let at = match rest.iter().position(|a| names.contains(&a.as_str())) {
        Some(i) if rest[i] != command => {
            return Err(Failure::usage(format!(
                "{path} is for '{command}', not '{}'",
                rest[i]
            )))
        }
        Some(i) => i + 1,
        None => {
            rest.insert(1, command.clone());
            2
        }
    };
    let mut spliced = Vec::new();
    for (key, value) in kv.entries().filter(|(k, _)| *k != "command") {
        match value {
            "true" => spliced.push(format!("--{key}")),
            "false" => {}
            _ => spliced.push(format!("--{key}={value}")),
        }
    }
    rest.splice(at..at, spliced);
    Ok(rest)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot set thread count: {e}")))?;
    }
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Factorize(a) => commands::factorize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::FilterResponse(a) => commands::filter_response(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
