//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use mdlag::evaluate::{leave_unit_out, predict_lgo, r2_lgo, unit_means, PredictionReport};
use mdlag::io::{read_checkpoint, read_dataset, write_checkpoint, write_dataset, Checkpoint};
use mdlag::state::SignificanceReport;
use mdlag::synthesis::{generate_freq, generate_time, make_scenario, GroundTruth, ScenarioConfig};
use mdlag::{fit, fit_from, Dataset, FitConfig, FitReport, Hyperparams, MdlagError, Method};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::{
    Axis, BenchArgs, BiasSweepArgs, FinetuneArgs, FitArgs, FitOptions, Generator, PredictArgs, PredictMode,
    ScenarioArgs, SimulateArgs,
};
use crate::error::{CliError, CliResult};

/// ν threshold for counting significant latents.
pub const NU_THRESHOLD: f64 = 0.02;

/// Dataset manifest inside an output directory.
pub fn data_manifest(dir: &Path) -> PathBuf {
    dir.join("data.json")
}

/// Ground-truth checkpoint inside a simulation directory.
pub fn truth_manifest(dir: &Path) -> PathBuf {
    dir.join("truth.json")
}

/// Fitted-model checkpoint inside a fit directory.
pub fn model_manifest(dir: &Path) -> PathBuf {
    dir.join("model.json")
}

/// Fit report inside a fit directory.
pub fn report_path(dir: &Path) -> PathBuf {
    dir.join("report.json")
}

/// Scenario described by the command line, with its overrides applied.
pub fn scenario_config(args: &ScenarioArgs, seed: Option<u64>) -> CliResult<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_slice(&fs::read(path)?)?,
        None => make_scenario(&args.scenario)?,
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    if let Some(snr) = args.snr {
        cfg = cfg.with_snr(snr);
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn generate(cfg: &ScenarioConfig, generator: Generator) -> CliResult<(Dataset, GroundTruth)> {
    Ok(match generator {
        Generator::Time => generate_time(cfg)?,
        Generator::Frequency => generate_freq(cfg)?,
    })
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = scenario_config(&args.scenario, args.seed)?;
    let (data, truth) = generate(&cfg, args.scenario.generator)?;
    fs::create_dir_all(&args.out)?;
    write_dataset(&data, &data_manifest(&args.out))?;
    let checkpoint = Checkpoint { model: truth.to_model(Hyperparams::default()), method: None, iterations: 0, elbo: Vec::new() };
    write_checkpoint(&checkpoint, &truth_manifest(&args.out))?;
    fs::write(args.out.join("scenario.json"), serde_json::to_vec_pretty(&cfg)?)?;
    println!(
        "wrote {} trials of {} units × {} samples to {}",
        data.n(),
        data.q(),
        data.t,
        args.out.display()
    );
    Ok(())
}

/// Library configuration from the shared fitting flags.
pub fn fit_config(opts: &FitOptions) -> FitConfig {
    let mut c = FitConfig::new(opts.method.into(), opts.latents);
    c.inducing_points = opts.inducing_points;
    c.taper = opts.taper;
    c.tol = opts.tol;
    c.max_iter = opts.max_iter;
    c.seed = opts.seed;
    c.time_guard = opts.time_guard;
    c.force = opts.force;
    c
}

/// JSON summary of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    pub total_s: f64,
    pub mean_iter_ms: f64,
    pub elbo: Vec<f64>,
    pub iter_ms: Vec<f64>,
    pub gp_stalls: usize,
    pub max_relative_decrease: f64,
    pub tau: Vec<f64>,
    pub delays: Vec<Vec<f64>>,
    /// `shared_variance[m][j]`.
    pub shared_variance: Vec<Vec<f64>>,
    pub significance: SignificanceReport,
}

impl FitSummary {
    pub fn new(report: &FitReport) -> Self {
        Self {
            method: report.method,
            iterations: report.iterations,
            converged: report.converged,
            total_s: report.total_s,
            mean_iter_ms: report.mean_iter_ms(),
            elbo: report.elbo.clone(),
            iter_ms: report.iter_ms.clone(),
            gp_stalls: report.gp_stalls,
            max_relative_decrease: report.max_relative_decrease(),
            tau: report.model.gp.tau.clone(),
            delays: report.model.gp.delays.clone(),
            shared_variance: report.shared_variance(),
            significance: report.significance(NU_THRESHOLD),
        }
    }
}

fn write_fit(report: &FitReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let checkpoint = Checkpoint {
        model: report.model.clone(),
        method: Some(report.method),
        iterations: report.iterations,
        elbo: report.elbo.clone(),
    };
    write_checkpoint(&checkpoint, &model_manifest(dir))?;
    fs::write(report_path(dir), serde_json::to_vec_pretty(&FitSummary::new(report))?)?;
    Ok(())
}

fn print_fit(report: &FitReport) {
    let sig = report.significance(NU_THRESHOLD);
    println!(
        "{} fit: {} iterations ({}), {:.2} s, final lower bound {:.6}, {} significant latents {:?}",
        report.method,
        report.iterations,
        if report.converged { "converged" } else { "iteration cap" },
        report.total_s,
        report.elbo.last().copied().unwrap_or(f64::NAN),
        sig.count,
        sig.latents,
    );
}

pub fn fit_cmd(args: &FitArgs) -> CliResult<()> {
    let data = read_dataset(&args.data)?;
    let config = match &args.config {
        Some(path) => serde_json::from_slice(&fs::read(path)?)?,
        None => fit_config(&args.fit),
    };
    let report = fit(&data, &config)?;
    write_fit(&report, &args.out)?;
    print_fit(&report);
    Ok(())
}

/// One line of a prediction report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRow {
    pub mode: String,
    pub route: Method,
    pub held_out: Option<usize>,
    /// Dataset row, or `all` for the pooled score.
    pub unit: String,
    pub edge_trim: usize,
    pub r2: f64,
}

fn prediction_rows(mode: &str, held_out: Option<usize>, data: &Dataset, report: &PredictionReport) -> CliResult<Vec<PredictRow>> {
    let row = |unit: String, r2: f64| PredictRow {
        mode: mode.to_string(),
        route: report.route,
        held_out,
        unit,
        edge_trim: report.edge_trim,
        r2,
    };
    let mut rows = Vec::with_capacity(report.units.len() + 1);
    for (k, &unit) in report.units.iter().enumerate() {
        let actual: Vec<DMatrix<f64>> = data.trials.iter().map(|y| y.rows(unit, 1).into_owned()).collect();
        let predicted: Vec<DMatrix<f64>> = report.predicted.iter().map(|y| y.rows(k, 1).into_owned()).collect();
        let means = unit_means(&actual, report.edge_trim);
        let r2 = r2_lgo(&actual, &predicted, &means, report.edge_trim).unwrap_or(f64::NAN);
        rows.push(row(unit.to_string(), r2));
    }
    rows.push(row("all".into(), report.r2));
    Ok(rows)
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let model = read_checkpoint(&args.model)?.model;
    let data = read_dataset(&args.data)?;
    let (mode, held_out, report) = match args.mode {
        PredictMode::Lgo => (
            "lgo",
            Some(args.held_out),
            predict_lgo(&model, &data, args.held_out, args.route.into(), args.inducing_points)?,
        ),
        PredictMode::Luo => ("luo", None, leave_unit_out(&model, &data, args.edge_trim)?),
    };
    let rows = prediction_rows(mode, held_out, &data, &report)?;
    write_csv(&args.out, &rows)?;
    println!("{mode} R² {:.4} over {} units ({} route)", report.r2, report.units.len(), report.route);
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub axis: String,
    pub size: usize,
    pub method: Method,
    pub seed: u64,
    pub mean_iter_ms: f64,
    pub iters_to_converge: usize,
    pub converged: bool,
    pub total_s: f64,
    /// Leave-group-out R² of the last group through the fitted route.
    pub r2: f64,
}

/// Log-log slope of mean per-iteration time for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub method: Method,
    pub slope: f64,
    pub points: usize,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Slope summary of raw benchmark rows, one entry per method in order of
/// first appearance. Every row is one point of the fit.
pub fn slopes(rows: &[BenchRow]) -> Vec<SlopeRow> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let (x, y): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| r.method == method).map(|r| (r.size as f64, r.mean_iter_ms)).unzip();
            SlopeRow { method, slope: log_log_slope(&x, &y), points: x.len() }
        })
        .collect()
}

/// Path of the slope summary that accompanies a raw benchmark CSV.
pub fn slopes_path(raw: &Path) -> PathBuf {
    raw.with_extension("slopes.csv")
}

struct BenchJob {
    size: usize,
    seed: u64,
    method: Method,
}

fn bench_scenario(args: &BenchArgs, size: usize, seed: u64) -> CliResult<ScenarioConfig> {
    let cfg = match args.axis {
        Axis::T => ScenarioConfig { n: args.n, t: size, seed, ..make_scenario("scaling_T")? },
        Axis::M => ScenarioConfig { n: args.n, t: args.t, seed, ..make_scenario("scaling_M")? }
            .with_groups(size, args.units, 20.0),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn bench_run(args: &BenchArgs, job: &BenchJob) -> CliResult<BenchRow> {
    let cfg = bench_scenario(args, job.size, job.seed)?;
    let data = generate_freq(&cfg)?.0;
    let mut c = FitConfig::new(job.method, args.latents);
    c.max_iter = args.max_iter;
    c.tol = args.tol;
    c.inducing_points = Some(args.inducing_points.min(data.t));
    c.time_guard = args.time_guard;
    c.force = args.force;
    let report = fit(&data, &c)?;
    let r2 = if data.m() > 1 {
        predict_lgo(&report.model, &data, data.m() - 1, job.method, c.inducing_points)?.r2
    } else {
        f64::NAN
    };
    Ok(BenchRow {
        axis: match args.axis {
            Axis::T => "T".into(),
            Axis::M => "M".into(),
        },
        size: job.size,
        method: job.method,
        seed: job.seed,
        mean_iter_ms: report.mean_iter_ms(),
        iters_to_converge: report.iterations,
        converged: report.converged,
        total_s: report.total_s,
        r2,
    })
}

/// Metadata written next to a benchmark CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchMeta {
    pub parallel: bool,
    pub threads: usize,
    pub timing: String,
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    if args.sizes.len() < 2 {
        return Err(CliError::Usage("bench needs at least two sizes".into()));
    }
    let methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    if methods.contains(&Method::Time) && !args.force {
        for &size in &args.sizes {
            let (m, t) = match args.axis {
                Axis::T => (2, size),
                Axis::M => (size, args.t),
            };
            let dim = args.latents * m * t;
            if dim > args.time_guard {
                return Err(MdlagError::ResourceGuard(format!(
                    "time method at {:?} = {size} needs p·M·T = {dim} > {}; pass --force to run it",
                    args.axis, args.time_guard
                ))
                .into());
            }
        }
    }
    let mut jobs = Vec::new();
    for &size in &args.sizes {
        for seed in 0..args.seeds {
            for &method in &methods {
                jobs.push(BenchJob { size, seed, method });
            }
        }
    }
    let rows: Vec<BenchRow> = if args.parallel {
        jobs.par_iter().map(|j| bench_run(args, j)).collect::<CliResult<_>>()?
    } else {
        jobs.iter().map(|j| bench_run(args, j)).collect::<CliResult<_>>()?
    };
    let summary = slopes(&rows);
    write_csv(&args.out, &rows)?;
    write_csv(&slopes_path(&args.out), &summary)?;
    let meta = BenchMeta {
        parallel: args.parallel,
        threads: rayon::current_num_threads(),
        timing: if args.parallel {
            "grid points ran concurrently; per-iteration times include contention between runs".into()
        } else {
            "grid points ran one at a time".into()
        },
    };
    fs::write(args.out.with_extension("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    for s in &summary {
        println!("{} slope over {:?}: {:.3} ({} points)", s.method, args.axis, s.slope, s.points);
    }
    Ok(())
}

/// One fit of a bias sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub scenario: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr: f64,
    pub seed: u64,
    pub method: Method,
    pub taper: bool,
    /// Timescale of the latent with the largest total ν.
    pub tau: f64,
    /// Delay of group 2 relative to group 1 for that latent (0 with one group).
    pub delay: f64,
    pub p_hat: usize,
    pub iterations: usize,
}

fn bias_row(cfg: &ScenarioConfig, method: Method, taper: bool, report: &FitReport) -> BiasRow {
    let nu = report.shared_variance();
    let lead = (0..report.model.p())
        .max_by(|&a, &b| {
            let sa: f64 = nu.iter().map(|g| g[a]).sum();
            let sb: f64 = nu.iter().map(|g| g[b]).sum();
            sa.total_cmp(&sb)
        })
        .unwrap_or(0);
    BiasRow {
        scenario: cfg.name.clone(),
        t: cfg.t,
        snr: cfg.snr.first().copied().unwrap_or(f64::NAN),
        seed: cfg.seed,
        method,
        taper,
        tau: report.model.gp.tau[lead],
        delay: report.model.gp.delays[lead].get(1).copied().unwrap_or(0.0),
        p_hat: report.significance(NU_THRESHOLD).count,
        iterations: report.iterations,
    }
}

pub fn bias_sweep(args: &BiasSweepArgs) -> CliResult<()> {
    let base = scenario_config(&args.scenario, None)?;
    let points: Vec<ScenarioConfig> = if !args.t_grid.is_empty() {
        args.t_grid.iter().map(|&t| ScenarioConfig { t, ..base.clone() }).collect()
    } else if !args.snr_grid.is_empty() {
        args.snr_grid.iter().map(|&s| base.clone().with_snr(s)).collect()
    } else {
        vec![base]
    };
    let mut rows = Vec::new();
    for point in &points {
        for seed in 0..args.seeds {
            let cfg = ScenarioConfig { seed, ..point.clone() };
            cfg.validate()?;
            let (data, _) = generate(&cfg, args.scenario.generator)?;
            let mut c = FitConfig::new(Method::Frequency, args.latents);
            c.taper = args.taper;
            c.tol = args.tol;
            c.max_iter = args.max_iter;
            rows.push(bias_row(&cfg, Method::Frequency, args.taper, &fit(&data, &c)?));
            if args.with_time {
                c.method = Method::Time;
                c.taper = false;
                rows.push(bias_row(&cfg, Method::Time, false, &fit(&data, &c)?));
            }
        }
    }
    write_csv(&args.out, &rows)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

pub fn finetune(args: &FinetuneArgs) -> CliResult<()> {
    let checkpoint = read_checkpoint(&args.model)?;
    let data = read_dataset(&args.data)?;
    let mut c = FitConfig::new(Method::Time, checkpoint.model.p());
    c.max_iter = args.iters;
    c.tol = args.tol;
    c.time_guard = args.time_guard;
    c.force = args.force;
    let before = checkpoint.model.gp.tau.clone();
    let report = fit_from(&data, &c, checkpoint.model)?;
    write_fit(&report, &args.out)?;
    print_fit(&report);
    let shift = before.iter().zip(&report.model.gp.tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("largest timescale change {shift:.4} ms");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, size: usize, ms: f64) -> BenchRow {
        BenchRow {
            axis: "T".into(),
            size,
            method,
            seed: 0,
            mean_iter_ms: ms,
            iters_to_converge: 1,
            converged: false,
            total_s: 0.0,
            r2: 0.0,
        }
    }

    #[test]
    fn slopes_of_power_laws() {
        let rows: Vec<BenchRow> = [16, 32, 64]
            .iter()
            .flat_map(|&s| {
                [row(Method::Time, s, 1e-3 * (s as f64).powi(3)), row(Method::Frequency, s, 0.5 * s as f64)]
            })
            .collect();
        let s = slopes(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].method, s[0].points), (Method::Time, 3));
        assert!((s[0].slope - 3.0).abs() < 1e-12);
        assert!((s[1].slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slopes_path_sits_next_to_the_raw_file() {
        assert_eq!(slopes_path(Path::new("out/bench.csv")), PathBuf::from("out/bench.slopes.csv"));
    }
}
