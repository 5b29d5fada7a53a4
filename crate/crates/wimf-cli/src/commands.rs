use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use wimf::datagen::{add_noise, gamma_rule, generate as generate_dataset, lambda_rule, DatasetKind, GeneratorParams, Grid};
use wimf::io::{format_f64, read_matrix_csv, write_matrix_csv, KeyValues};
use wimf::metrics::{monte_carlo, score, EvalReport, Method, MonteCarloTask};
use wimf::solver::{factorize as run_solver, OuterAction, SolverConfig, SolverTrace, StepRule};
use wimf::spectral::{eigendecompose, filter_gain, FilterSpec, Laplacian};

use crate::{
    BenchmarkArgs, EvaluateArgs, FactorizeArgs, Failure, FilterArgs, GenerateArgs, GridChoice, Kind, Snr,
    SolverArgs, StepChoice,
};

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    wimf::Error::Io {
        path: path.display().to_string(),
        source: e,
    }
    .into()
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn grid_name(g: GridChoice) -> &'static str {
    match g {
        GridChoice::Dense => "dense",
        GridChoice::Printed => "printed",
    }
}

fn resolve_snr(snr: Snr, kind: DatasetKind) -> f64 {
    match snr {
        Snr::Db(v) => v,
        Snr::Lowest => kind.lowest_reference_snr_db(),
    }
}

fn snr_text(snr: Snr) -> String {
    match snr {
        Snr::Db(v) => format_f64(v),
        Snr::Lowest => "lowest".into(),
    }
}

fn set_opt(kv: &mut KeyValues, key: &str, value: Option<f64>) {
    if let Some(v) = value {
        kv.set_f64(key, v);
    }
}

fn solver_config(s: &SolverArgs) -> SolverConfig {
    SolverConfig {
        epsilon: s.epsilon,
        max_outer_iters: s.max_outer,
        max_inner_iters: s.max_inner,
        step_rule: match s.step_rule {
            StepChoice::Curvature => StepRule::CurvatureScaled,
            StepChoice::Plain => StepRule::Plain { alpha: s.step_size },
        },
        stationarity_tol: s.stationarity_tol,
        max_modes: s.max_modes,
        ..SolverConfig::default()
    }
}

fn record_solver(kv: &mut KeyValues, s: &SolverArgs) {
    kv.set_f64("epsilon", s.epsilon);
    if let Some(m) = s.max_modes {
        kv.set("max-modes", m);
    }
    kv.set("max-outer", s.max_outer);
    kv.set("max-inner", s.max_inner);
    kv.set(
        "step-rule",
        match s.step_rule {
            StepChoice::Curvature => "curvature",
            StepChoice::Plain => "plain",
        },
    );
    set_opt(kv, "step-size", s.step_size);
    set_opt(kv, "stationarity-tol", s.stationarity_tol);
}

fn kind_name(k: Kind) -> &'static str {
    DatasetKind::from(k).as_str()
}

pub fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let kind = DatasetKind::from(a.kind);
    let preset = Grid::preset(kind, a.grid.into());
    let grid = Grid::new(
        a.delta_l.unwrap_or(preset.delta_l),
        a.length_l.unwrap_or(preset.length_l),
        a.delta_t.unwrap_or(preset.delta_t),
        a.length_t.unwrap_or(preset.length_t),
    )?;
    let mut params = GeneratorParams::reference(kind, a.seed, a.randomize_mixing);
    if let Some(d) = a.delta {
        params.delta = d;
    }
    let snr = resolve_snr(a.snr, kind);
    let data = add_noise(&generate_dataset(&grid, &params)?, snr, a.seed)?;

    let out = &a.out.out;
    prepare_dir(out)?;
    write_matrix_csv(&out.join("Y.csv"), &data.y)?;
    write_matrix_csv(&out.join("truth.csv"), &data.truth)?;

    let mut meta = KeyValues::new();
    meta.set("kind", kind.as_str())
        .set("rows", grid.n_d)
        .set("cols", grid.n_t)
        .set_f64("delta_l", grid.delta_l)
        .set_f64("length_l", grid.length_l)
        .set_f64("delta_t", grid.delta_t)
        .set_f64("length_t", grid.length_t)
        .set("n_modes", params.n_modes)
        .set("truth_modes", params.truth_count())
        .set_list("alpha", &params.alpha)
        .set_list("beta", &params.beta)
        .set_list("k", &params.k)
        .set_list("omega", &params.omega)
        .set_list("a", &params.a)
        .set_list("b", &params.b)
        .set_f64("delta", params.delta)
        .set("seed", a.seed)
        .set_f64("snr_db", snr)
        .set("randomize_mixing", a.randomize_mixing);
    meta.write(&out.join("meta.cfg"))?;

    let mut cfg = KeyValues::new();
    cfg.set("command", "generate")
        .set("kind", kind.as_str())
        .set("grid", grid_name(a.grid))
        .set_f64("snr", snr)
        .set("seed", a.seed)
        .set_f64("delta", params.delta)
        .set("randomize-mixing", a.randomize_mixing)
        .set_f64("delta-l", grid.delta_l)
        .set_f64("length-l", grid.length_l)
        .set_f64("delta-t", grid.delta_t)
        .set_f64("length-t", grid.length_t)
        .set("out", out.display());
    cfg.write(&out.join("config.cfg"))?;

    println!(
        "Y: {} x {} (space x time), truth modes: {}, snr {} dB -> {}",
        grid.n_d,
        grid.n_t,
        params.truth_count(),
        format_f64(snr),
        out.display()
    );
    Ok(())
}

fn trace_csv(trace: &SolverTrace) -> String {
    let mut s = String::from(
        "iteration,n_modes,inner_iterations,inner_converged,gradient_norm,objective,polar_value,k_bar_star,action,tau,objective_after\n",
    );
    for r in &trace.records {
        let (action, tau, after) = match r.action {
            OuterAction::Append { tau, objective_after } => ("append", format_f64(tau), format_f64(objective_after)),
            OuterAction::Stop(reason) => (reason.as_str(), String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{action},{tau},{after}",
            r.iteration,
            r.n_modes,
            r.inner_iterations,
            r.inner_converged,
            format_f64(r.gradient_norm),
            format_f64(r.objective),
            format_f64(r.polar_value),
            format_f64(r.k_bar_star),
        );
    }
    s
}

fn read_meta(dir: &Path) -> Result<Option<KeyValues>, Failure> {
    let path = dir.join("meta.cfg");
    if path.exists() {
        Ok(Some(KeyValues::read(&path)?))
    } else {
        Ok(None)
    }
}

pub fn factorize(a: &FactorizeArgs) -> Result<(), Failure> {
    let y = read_matrix_csv(&a.input.join("Y.csv"))?;
    if y.is_empty() {
        return Err(wimf::Error::InvalidDimension("Y.csv is empty".into()).into());
    }
    let meta = read_meta(&a.input)?;
    let meta_count = match &meta {
        Some(m) => m.parse::<usize>("truth_modes")?,
        None => None,
    };
    let meta_delta = match &meta {
        Some(m) => m.parse_f64("delta")?,
        None => None,
    };

    let rule_count = a.n.or(a.solver.max_modes).or(meta_count);
    let lambda = match a.lambda {
        Some(l) => l,
        None => {
            let n = rule_count.ok_or_else(|| {
                Failure::usage("pass --lambda, or a mode count through --n, --max-modes or meta.cfg")
            })?;
            let choice = lambda_rule(&y, n)?;
            if choice.rank_deficient {
                eprintln!("warning: data has fewer than {n} nonzero singular values");
            }
            choice.value
        }
    };
    let delta = a.delta.or(meta_delta).unwrap_or(1.0);
    let gamma = match a.gamma {
        Some(g) => g,
        None => gamma_rule(y.nrows(), delta)?,
    };
    let cfg = solver_config(&a.solver);

    let out = &a.out.out;
    prepare_dir(out)?;
    let mut resolved = KeyValues::new();
    resolved
        .set("command", "factorize")
        .set("input", a.input.display())
        .set_f64("lambda", lambda)
        .set_f64("gamma", gamma)
        .set_f64("delta", delta);
    if let Some(n) = a.n {
        resolved.set("n", n);
    }
    record_solver(&mut resolved, &a.solver);
    resolved.set("out", out.display());
    resolved.write(&out.join("config.cfg"))?;

    let result = match run_solver(&y, &cfg, lambda, gamma, None) {
        Ok(r) => r,
        Err(failure) => {
            write_text(&out.join("trace.csv"), &trace_csv(&failure.trace))?;
            return Err(failure.error.into());
        }
    };
    write_text(&out.join("trace.csv"), &trace_csv(&result.trace))?;
    write_matrix_csv(&out.join("D.csv"), &result.model.modes)?;
    write_matrix_csv(&out.join("X.csv"), &result.model.coeffs)?;
    let k = DMatrix::from_column_slice(result.model.n_modes(), 1, &result.model.wavenumbers_sq);
    write_matrix_csv(&out.join("k.csv"), &k)?;

    let last = result.trace.records.last();
    println!(
        "{} modes, stop: {}, lambda = {}, gamma = {}, objective = {}, polar = {}",
        result.model.n_modes(),
        result.stop.as_str(),
        format_f64(lambda),
        format_f64(gamma),
        last.map_or(String::new(), |r| format_f64(r.objective)),
        last.map_or(String::new(), |r| format_f64(r.polar_value)),
    );
    Ok(())
}

const REPORT_HEADER: &str = "dataset,snr_db,trials,mse_e3_mean,mse_e3_std,fmse_e3_mean,fmse_e3_std\n";

pub fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let recovered = read_matrix_csv(&a.recovered)?;
    let truth = read_matrix_csv(&a.truth)?;
    let meta = match a.truth.parent() {
        Some(dir) => read_meta(dir)?,
        None => None,
    };
    let dataset = match (&a.dataset, &meta) {
        (Some(d), _) => d.clone(),
        (None, Some(m)) => m.get("kind").unwrap_or("custom").to_string(),
        (None, None) => "custom".into(),
    };
    let snr = match (a.snr, &meta) {
        (Some(Snr::Db(v)), _) => v,
        (Some(Snr::Lowest), _) => dataset
            .parse::<DatasetKind>()
            .map_err(|_| Failure::usage("--snr lowest needs a known --dataset kind"))?
            .lowest_reference_snr_db(),
        (None, Some(m)) => m.parse_f64("snr_db")?.unwrap_or(f64::INFINITY),
        (None, None) => f64::INFINITY,
    };

    let metrics = score(&recovered, &truth, a.padding)?;
    let out = &a.out.out;
    prepare_dir(out)?;
    let mut report = String::from(REPORT_HEADER);
    let _ = writeln!(
        report,
        "{dataset},{},1,{},0.0,{},0.0",
        format_f64(snr),
        format_f64(metrics.mse * 1e3),
        format_f64(metrics.fourier_mse * 1e3)
    );
    write_text(&out.join("report.csv"), &report)?;

    let mut cfg = KeyValues::new();
    cfg.set("command", "evaluate")
        .set("recovered", a.recovered.display())
        .set("truth", a.truth.display())
        .set("padding", a.padding)
        .set("dataset", &dataset)
        .set_f64("snr", snr)
        .set("out", out.display());
    cfg.write(&out.join("config.cfg"))?;

    println!(
        "{dataset}: mse x1e3 = {}, fourier mse x1e3 = {} over {} matched modes",
        format_f64(metrics.mse * 1e3),
        format_f64(metrics.fourier_mse * 1e3),
        metrics.per_mode.len()
    );
    Ok(())
}

pub fn filter_response(a: &FilterArgs) -> Result<(), Failure> {
    let spec = FilterSpec::new(a.k_bar, a.gamma)?;
    let basis = eigendecompose(&Laplacian::new(a.n)?)?;
    let mut csv = String::from("eigenvalue,coefficient\n");
    let mut peak = (f64::NEG_INFINITY, 0.0);
    for &v in basis.eigenvalues().iter() {
        let c = filter_gain(v, &spec);
        if c > peak.0 {
            peak = (c, v);
        }
        let _ = writeln!(csv, "{},{}", format_f64(v), format_f64(c));
    }
    let out = &a.out.out;
    prepare_dir(out)?;
    write_text(&out.join("filter.csv"), &csv)?;

    let mut cfg = KeyValues::new();
    cfg.set("command", "filter-response")
        .set_f64("k-bar", a.k_bar)
        .set_f64("gamma", a.gamma)
        .set("n", a.n)
        .set("out", out.display());
    cfg.write(&out.join("config.cfg"))?;

    let width = if a.gamma > 0.0 {
        format_f64(2.0 / a.gamma.sqrt())
    } else {
        "inf".into()
    };
    println!(
        "{} eigenvalues, peak {} at {}, -3 dB width {width}",
        a.n,
        format_f64(peak.0),
        format_f64(peak.1)
    );
    Ok(())
}

fn summary_fields(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{}",
        format_f64(r.mse.mean * 1e3),
        format_f64(r.mse.std * 1e3),
        format_f64(r.fourier_mse.mean * 1e3),
        format_f64(r.fourier_mse.std * 1e3),
        r.failed
    )
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<(), Failure> {
    if a.trials == 0 {
        return Err(Failure::usage("--trials must be at least 1"));
    }
    let kinds: Vec<Kind> = if a.kind.is_empty() {
        vec![Kind::Homogeneous, Kind::Inhomogeneous, Kind::Traveling, Kind::Segmented]
    } else {
        a.kind.clone()
    };
    let cfg = solver_config(&a.solver);
    cfg.validate()?;

    let mut cells = Vec::new();
    for &k in &kinds {
        for &s in &a.snr {
            let kind = DatasetKind::from(k);
            cells.push((kind, resolve_snr(s, kind)));
        }
    }
    let task = |kind: DatasetKind, snr: f64, method: Method| MonteCarloTask {
        grid: a.grid.into(),
        randomize_mixing: a.randomize_mixing,
        delta: a.delta,
        fourier_padding: a.padding,
        ..MonteCarloTask::new(kind, snr, a.trials, a.seed, method)
    };
    let reports: Vec<(EvalReport, EvalReport)> = cells
        .par_iter()
        .map(|&(kind, snr)| {
            let wimf = monte_carlo(&task(kind, snr, Method::Wimf(cfg.clone())));
            let pca = monte_carlo(&task(kind, snr, Method::Pca));
            wimf.and_then(|w| pca.map(|p| (w, p)))
        })
        .collect::<Result<_, _>>()?;

    let out = &a.out.out;
    prepare_dir(out)?;
    let mut table = String::from(
        "dataset,snr_db,trials,wimf_mse_e3_mean,wimf_mse_e3_std,wimf_fmse_e3_mean,wimf_fmse_e3_std,wimf_failed,\
         pca_mse_e3_mean,pca_mse_e3_std,pca_fmse_e3_mean,pca_fmse_e3_std,pca_failed\n",
    );
    let mut trials = String::from("dataset,snr_db,method,seed,mse_e3,fmse_e3,n_recovered,lambda,gamma,error\n");
    for (w, p) in &reports {
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            w.dataset,
            format_f64(w.snr_db),
            a.trials,
            summary_fields(w),
            summary_fields(p)
        );
        for r in [w, p] {
            for t in &r.trials {
                let row = match &t.result {
                    Ok(m) => format!(
                        "{},{},{},{},{},",
                        format_f64(m.mse * 1e3),
                        format_f64(m.fourier_mse * 1e3),
                        m.n_recovered,
                        m.shrinkage.map(format_f64).unwrap_or_default(),
                        m.helmholtz_weight.map(format_f64).unwrap_or_default()
                    ),
                    Err(e) => format!(",,,,,\"{}\"", e.replace('"', "'")),
                };
                let _ = writeln!(trials, "{},{},{},{},{row}", r.dataset, format_f64(r.snr_db), r.method, t.seed);
            }
        }
        println!(
            "{:<13} snr {:>7}: wimf mse x1e3 {:.4} ± {:.4} ({} failed), pca {:.4} ± {:.4}",
            w.dataset.as_str(),
            format_f64(w.snr_db),
            w.mse.mean * 1e3,
            w.mse.std * 1e3,
            w.failed,
            p.mse.mean * 1e3,
            p.mse.std * 1e3
        );
    }
    write_text(&out.join("benchmark.csv"), &table)?;
    write_text(&out.join("trials.csv"), &trials)?;

    let mut resolved = KeyValues::new();
    resolved
        .set("command", "benchmark")
        .set("kind", kinds.iter().map(|&k| kind_name(k)).collect::<Vec<_>>().join(","))
        .set("snr", a.snr.iter().map(|&s| snr_text(s)).collect::<Vec<_>>().join(","))
        .set("trials", a.trials)
        .set("seed", a.seed)
        .set("grid", grid_name(a.grid));
    set_opt(&mut resolved, "delta", a.delta);
    resolved
        .set("randomize-mixing", a.randomize_mixing)
        .set("padding", a.padding);
    record_solver(&mut resolved, &a.solver);
    resolved.set("out", out.display());
    resolved.write(&out.join("config.cfg"))?;
    Ok(())
}
