//! Coordinate-ascent fitting shared by the three inference methods.
//!
//! Every iteration updates the regression factors from the current latent
//! moments, takes a gradient step on the GP parameters, re-infers the
//! latents and evaluates the lower bound. Each step maximizes the bound
//! with the other factors held fixed, so the recorded trace is
//! non-decreasing up to rounding.

pub mod frequency;
pub mod inducing;
pub mod time;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MdlagError, Result};
use crate::kernels::InducingGrid;
use crate::state::{
    initialize, shared_variance_fraction, significant_latents, update_regression, GpParams, Hyperparams, Model,
    SignificanceReport, SuffStats, VarianceMeasure,
};

/// Default relative lower-bound change at which a fit stops.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Default size guard for the time-domain method (`p·M·T`).
pub const DEFAULT_TIME_GUARD: usize = 40_000;

/// Inference method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Exact time-domain posterior over all latents.
    Time,
    /// Posterior over inducing variables on a fixed grid.
    Inducing,
    /// Per-frequency posterior under the Whittle approximation.
    Frequency,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Time => "time",
            Method::Inducing => "inducing",
            Method::Frequency => "frequency",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = MdlagError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Method::Time),
            "inducing" => Ok(Method::Inducing),
            "frequency" => Ok(Method::Frequency),
            other => Err(MdlagError::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Settings of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Inference method.
    pub method: Method,
    /// Number of latents the model carries.
    pub p: usize,
    /// Inducing points per latent (inducing method only).
    pub inducing_points: Option<usize>,
    /// Apply the periodic Hamming taper before the DFT (frequency method only).
    pub taper: bool,
    /// Relative lower-bound change that ends the fit.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Seed of the loading initialization.
    pub seed: u64,
    /// Prior hyperparameters.
    pub hyper: Hyperparams,
    /// Whether GP parameters are learned.
    pub learn_gp: bool,
    /// Gradient steps taken on the GP parameters per iteration.
    pub gp_steps: usize,
    /// Refuse time-domain fits with `p·M·T` above this size unless `force`.
    pub time_guard: usize,
    /// Override the time-domain size guard.
    pub force: bool,
}

impl FitConfig {
    /// Defaults for `method` with `p` latents.
    pub fn new(method: Method, p: usize) -> Self {
        Self {
            method,
            p,
            inducing_points: None,
            taper: false,
            tol: DEFAULT_TOL,
            max_iter: 10_000,
            seed: 0,
            hyper: Hyperparams::default(),
            learn_gp: true,
            gp_steps: 1,
            time_guard: DEFAULT_TIME_GUARD,
            force: false,
        }
    }

    /// Checks method-specific settings against a dataset.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.p == 0 {
            return Err(MdlagError::Config("latent count must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(MdlagError::Config("tolerance must be non-negative".into()));
        }
        match self.method {
            Method::Inducing => {
                let t_ind = self
                    .inducing_points
                    .ok_or_else(|| MdlagError::Config("the inducing method needs inducing_points".into()))?;
                InducingGrid::uniform(t_ind, data.t)?;
            }
            Method::Time => {
                let dim = self.p * data.m() * data.t;
                if dim > self.time_guard && !self.force {
                    return Err(MdlagError::ResourceGuard(format!(
                        "time-domain posterior of size p·M·T = {dim} exceeds {}; use the frequency or inducing method, or force",
                        self.time_guard
                    )));
                }
            }
            Method::Frequency => {
                if self.taper && data.t < 2 {
                    return Err(MdlagError::Config("tapering needs T ≥ 2".into()));
                }
            }
        }
        if self.taper && self.method != Method::Frequency {
            return Err(MdlagError::Config("taper applies to the frequency method only".into()));
        }
        self.hyper.validate()
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Method used.
    pub method: Method,
    /// Fitted model.
    pub model: Model,
    /// Latent posterior under the final parameters.
    pub latents: LatentPosterior,
    /// Lower bound after initialization followed by one value per iteration.
    pub elbo: Vec<f64>,
    /// Wall-clock duration of each iteration (ms).
    pub iter_ms: Vec<f64>,
    /// Iterations run.
    pub iterations: usize,
    /// Whether the tolerance was reached before the iteration cap.
    pub converged: bool,
    /// Iterations in which no GP step could improve the bound.
    pub gp_stalls: usize,
    /// Total wall-clock time including initialization (s).
    pub total_s: f64,
}

impl FitReport {
    /// ν table computed from `⟨‖c_j^m‖²⟩`.
    pub fn shared_variance(&self) -> Vec<Vec<f64>> {
        shared_variance_fraction(&self.model.reg, VarianceMeasure::LoadingNorm)
    }

    /// Latents whose ν reaches `threshold` in at least one group.
    pub fn significance(&self, threshold: f64) -> SignificanceReport {
        significant_latents(&self.shared_variance(), threshold)
    }

    /// Mean per-iteration wall time (ms).
    pub fn mean_iter_ms(&self) -> f64 {
        if self.iter_ms.is_empty() {
            0.0
        } else {
            self.iter_ms.iter().sum::<f64>() / self.iter_ms.len() as f64
        }
    }

    /// Largest relative decrease between consecutive lower-bound values
    /// (0 when the trace never decreases).
    pub fn max_relative_decrease(&self) -> f64 {
        self.elbo
            .windows(2)
            .map(|w| ((w[0] - w[1]) / w[0].abs().max(f64::MIN_POSITIVE)).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Method-specific latent posterior.
#[derive(Debug, Clone)]
pub enum LatentPosterior {
    /// Joint posterior over all latents of a trial.
    Time(time::TimePosterior),
    /// Posterior over inducing variables.
    Inducing(inducing::InducingPosterior),
    /// Per-frequency posteriors.
    Frequency(frequency::FrequencyPosterior),
}

/// One inference method, as seen by the shared loop.
pub(crate) trait Engine {
    /// Re-infers the latents under the current model.
    fn update_latents(&mut self, model: &Model) -> Result<()>;
    /// Latent statistics for the regression updates.
    fn stats(&self, model: &Model) -> Result<Vec<SuffStats>>;
    /// Snapshot of the GP-dependent part of the bound with every posterior
    /// factor held fixed.
    fn gp_objective(&self, model: &Model) -> Result<Box<dyn GpObjective + '_>>;
    /// Lower bound under the current latents and model.
    fn elbo(&self, model: &Model) -> Result<f64>;
    /// Current latent posterior.
    fn latents(&self) -> LatentPosterior;
}

/// The part of the lower bound that depends on the GP parameters.
pub trait GpObjective {
    /// Objective value.
    fn value(&self, gp: &GpParams) -> Result<f64>;
    /// Objective value and gradient with respect to `(ln γ_j, D_j^2 … D_j^M)`
    /// for each latent in turn.
    fn value_grad(&self, gp: &GpParams) -> Result<(f64, Vec<f64>)>;
}

/// Outcome of one GP update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpStep {
    /// Whether any step was accepted.
    pub accepted: bool,
    /// Objective change.
    pub gain: f64,
}

/// Gradient ascent on the GP parameters with backtracking.
///
/// Steps are taken in the coordinates `(ln γ, D/δ)` and mapped through the
/// `tanh` reparameterization of the delays. A trial step is kept only if
/// the objective does not decrease; the step size halves on rejection (at
/// most ten times) and grows by half on acceptance.
#[derive(Debug, Clone)]
pub struct GpOptimizer {
    /// Current step size; `None` until the first gradient is seen.
    pub step: Option<f64>,
    /// Largest coordinate change of the very first trial step.
    pub initial_move: f64,
    /// Maximum halvings per step.
    pub max_backtracks: usize,
}

impl Default for GpOptimizer {
    fn default() -> Self {
        Self { step: None, initial_move: 0.1, max_backtracks: 10 }
    }
}

impl GpOptimizer {
    /// Takes up to `steps` accepted gradient steps on `obj`, updating `gp`.
    pub fn run(&mut self, obj: &dyn GpObjective, gp: &mut GpParams, delta: f64, steps: usize) -> Result<GpStep> {
        let mut out = GpStep { accepted: false, gain: 0.0 };
        for _ in 0..steps {
            let (f0, grad) = obj.value_grad(gp)?;
            let chain = gp.chain_factors();
            let m = gp.m();
            // Ascent direction in (ln γ, D/δ) mapped to (ln γ, D̂).
            let dir: Vec<f64> = grad
                .iter()
                .zip(&chain)
                .enumerate()
                .map(|(i, (g, c))| if i % m == 0 { *g } else { g * delta * delta / c })
                .collect();
            let scale = dir
                .iter()
                .zip(&chain)
                .enumerate()
                .map(|(i, (d, c))| if i % m == 0 { d.abs() } else { (d * c / delta).abs() })
                .fold(0.0, f64::max);
            if !scale.is_finite() || scale <= 0.0 {
                return Ok(out);
            }
            let mut step = self.step.unwrap_or(self.initial_move / scale);
            let theta0 = gp.to_unconstrained();
            let mut trial = gp.clone();
            let mut accepted = false;
            for _ in 0..=self.max_backtracks {
                let theta: Vec<f64> = theta0.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
                trial.set_unconstrained(&theta);
                let f1 = obj.value(&trial)?;
                if f1.is_finite() && f1 >= f0 {
                    accepted = true;
                    out.gain += f1 - f0;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                self.step = Some(step);
                return Ok(out);
            }
            *gp = trial;
            out.accepted = true;
            self.step = Some(step * 1.5);
        }
        Ok(out)
    }
}

/// Fits a model to `data` from the default initialization.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitReport> {
    config.validate(data)?;
    let model = initialize(data, config.p, config.seed, &config.hyper)?;
    fit_from(data, config, model)
}

/// Fits a model to `data` starting from `model`.
pub fn fit_from(data: &Dataset, config: &FitConfig, model: Model) -> Result<FitReport> {
    config.validate(data)?;
    model.validate()?;
    model.check_dataset(data)?;
    let start = Instant::now();
    match config.method {
        Method::Time => {
            let engine = time::TimeEngine::new(data)?;
            run_loop(engine, config, model, data.delta, start)
        }
        Method::Inducing => {
            let t_ind = config.inducing_points.unwrap_or(data.t);
            let engine = inducing::InducingEngine::new(data, t_ind)?;
            run_loop(engine, config, model, data.delta, start)
        }
        Method::Frequency => {
            let engine = frequency::FrequencyEngine::new(data, config.taper)?;
            run_loop(engine, config, model, data.delta, start)
        }
    }
}

fn run_loop<E: Engine>(
    mut engine: E,
    config: &FitConfig,
    mut model: Model,
    delta: f64,
    start: Instant,
) -> Result<FitReport> {
    engine.update_latents(&model)?;
    let mut elbo = vec![check_finite(engine.elbo(&model)?)?];
    let mut iter_ms = Vec::new();
    let mut optimizer = GpOptimizer::default();
    let mut converged = false;
    let mut gp_stalls = 0;
    for _ in 0..config.max_iter {
        let t0 = Instant::now();
        let stats = engine.stats(&model)?;
        update_regression(&mut model.reg, &model.hyper, &stats)?;
        if config.learn_gp && config.gp_steps > 0 {
            let mut gp = model.gp.clone();
            let step = {
                let obj = engine.gp_objective(&model)?;
                optimizer.run(obj.as_ref(), &mut gp, delta, config.gp_steps)?
            };
            if !step.accepted {
                gp_stalls += 1;
            }
            model.gp = gp;
        }
        engine.update_latents(&model)?;
        let value = check_finite(engine.elbo(&model)?)?;
        iter_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let prev = *elbo.last().expect("trace starts non-empty");
        elbo.push(value);
        if ((value - prev) / prev.abs()).abs() < config.tol {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        method: config.method,
        latents: engine.latents(),
        iterations: iter_ms.len(),
        model,
        elbo,
        iter_ms,
        converged,
        gp_stalls,
        total_s: start.elapsed().as_secs_f64(),
    })
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MdlagError::NonFinite("lower bound".into()))
    }
}

/// Coordinates `(ln γ_j, D_j^2 … D_j^M)`, latent by latent, in which
/// [`GpObjective::value_grad`] reports gradients.
pub fn natural_coordinates(gp: &GpParams) -> Vec<f64> {
    let m = gp.m();
    let mut out = Vec::with_capacity(gp.p() * m);
    for j in 0..gp.p() {
        out.push(-2.0 * gp.tau[j].ln());
        out.extend(gp.delays[j].iter().skip(1));
    }
    out
}

/// Inverse of [`natural_coordinates`].
pub fn set_natural_coordinates(gp: &mut GpParams, x: &[f64]) {
    let m = gp.m();
    for j in 0..gp.p() {
        gp.tau[j] = (-0.5 * x[j * m]).exp();
        for g in 1..m {
            gp.delays[j][g] = x[j * m + g];
        }
    }
}
