//! Exact time-domain inference.
//!
//! The latents of one trial are stacked time-major: entry
//! `(t·M + m)·p + j` holds latent `j` as seen by group `m` at sample `t`.
//! Per-latent covariances `K_j` use the group-major order `m·T + t` of
//! [`crate::kernels::build_K`].

use nalgebra::{DMatrix, DVector};

use super::{Engine, FitConfig, FitReport, GpObjective, GpOptimizer, GpStep, LatentPosterior, Method};
use crate::data::Dataset;
use crate::error::Result;
use crate::kernels::{build_K, delayed_dt, se_ddt, se_dgamma};
use crate::numerics::spd_inverse_logdet_jitter;
use crate::state::{
    data_stats, expected_loglik, neg_kl_regression, update_regression, GpParams, Model, SuffStats,
};

/// Posterior over the stacked latents of every trial.
#[derive(Debug, Clone)]
pub struct TimePosterior {
    /// Latents.
    pub p: usize,
    /// Groups.
    pub m: usize,
    /// Samples per trial.
    pub t: usize,
    /// Posterior mean of each trial (length `pMT`).
    pub mu: Vec<DVector<f64>>,
    /// Posterior covariance shared by all trials (`pMT × pMT`).
    pub sigma: DMatrix<f64>,
    /// `ln |Σ̄|`.
    pub logdet: f64,
}

impl TimePosterior {
    /// Position of latent `j`, group `m`, sample `t` in the stacked vector.
    pub fn index(&self, t: usize, m: usize, j: usize) -> usize {
        (t * self.m + m) * self.p + j
    }

    /// Posterior mean of trial `n` for group `m` as a `p × T` matrix.
    pub fn group_means(&self, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.t, |j, t| self.mu[n][self.index(t, m, j)])
    }

    /// `Σ_n ⟨x_j x_jᵀ⟩` over the `MT` grid of latent `j`, in group-major order.
    pub fn latent_second_moment(&self, j: usize) -> DMatrix<f64> {
        let mt = self.m * self.t;
        let pos: Vec<usize> = (0..mt).map(|a| self.index(a % self.t, a / self.t, j)).collect();
        let n = self.mu.len() as f64;
        let means = DMatrix::from_fn(mt, self.mu.len(), |a, k| self.mu[k][pos[a]]);
        let mut e = DMatrix::from_fn(mt, mt, |a, b| n * self.sigma[(pos[a], pos[b])]);
        e += &means * means.transpose();
        e
    }
}

/// Stacked prior precision `K̄⁻¹` in time-major order and `ln |K̄|`.
fn prior_precision(gp: &GpParams, m: usize, t: usize, delta: f64) -> Result<(DMatrix<f64>, f64)> {
    let p = gp.p();
    let dim = p * m * t;
    let mut out = DMatrix::zeros(dim, dim);
    let mut logdet = 0.0;
    for j in 0..p {
        let (kinv, ld, _) = spd_inverse_logdet_jitter(&build_K(&gp.kernel(j), m, t, delta))?;
        logdet += ld;
        for a in 0..m * t {
            let ia = ((a % t) * m + a / t) * p + j;
            for b in 0..m * t {
                let ib = ((b % t) * m + b / t) * p + j;
                out[(ia, ib)] = kinv[(a, b)];
            }
        }
    }
    Ok((out, logdet))
}

/// Posterior over the latents: `Σ̄ = (K̄⁻¹ + blockdiag⟨CᵀΦC⟩)⁻¹` and
/// `μ̄_n = Σ̄ ⟨C⟩ᵀ⟨Φ⟩(ȳ_n − ⟨d⟩)`.
pub fn update_qx_time(model: &Model, data: &Dataset) -> Result<TimePosterior> {
    model.check_dataset(data)?;
    let (p, m, t) = (model.p(), model.m(), data.t);
    let (mut prec, _) = prior_precision(&model.gp, m, t, data.delta)?;
    let psi: Vec<DMatrix<f64>> = (0..m).map(|g| model.reg.ctphic(g)).collect();
    for s in 0..t {
        for g in 0..m {
            let base = (s * m + g) * p;
            for a in 0..p {
                for b in 0..p {
                    prec[(base + a, base + b)] += psi[g][(a, b)];
                }
            }
        }
    }
    let (sigma, ld_prec, _) = spd_inverse_logdet_jitter(&prec)?;
    let rhs = projected_data(model, data);
    let mu_all = &sigma * rhs;
    let mu = (0..data.n()).map(|n| mu_all.column(n).into_owned()).collect();
    Ok(TimePosterior { p, m, t, mu, sigma, logdet: -ld_prec })
}

/// `⟨C⟩ᵀ⟨Φ⟩(y − ⟨d⟩)` stacked time-major, one column per trial.
fn projected_data(model: &Model, data: &Dataset) -> DMatrix<f64> {
    let (p, m, t) = (model.p(), model.m(), data.t);
    let mut out = DMatrix::zeros(p * m * t, data.n());
    for g in 0..m {
        let ctphi = model.reg.ct_phi(g);
        let rows = data.group_rows(g);
        let d = &model.reg.groups[g].mu_d;
        for (n, y) in data.trials.iter().enumerate() {
            let mut centered = y.rows(rows.start, rows.len()).into_owned();
            for mut col in centered.column_iter_mut() {
                col -= d;
            }
            let proj = &ctphi * centered;
            for s in 0..t {
                for j in 0..p {
                    out[((s * m + g) * p + j, n)] = proj[(j, s)];
                }
            }
        }
    }
    out
}

/// Latent statistics feeding the regression updates.
pub fn time_stats(post: &TimePosterior, data: &Dataset) -> Vec<SuffStats> {
    let (p, m, t) = (post.p, post.m, post.t);
    let n = data.n();
    (0..m)
        .map(|g| {
            let rows = data.group_rows(g);
            let (sy, syy) = data_stats(data, g);
            let mut s = SuffStats::zeros(p, sy, syy, (n * t) as f64);
            for k in 0..n {
                let x = post.group_means(k, g);
                let y = data.trials[k].rows(rows.start, rows.len());
                s.sxy += &x * y.transpose();
                s.sxx += &x * x.transpose();
                s.sx += x.column_sum();
            }
            for tt in 0..t {
                let base = post.index(tt, g, 0);
                s.sxx += post.sigma.view((base, base), (p, p)) * n as f64;
            }
            s
        })
        .collect()
}

/// Regression-factor updates from time-domain latent moments.
pub fn update_regression_factors_time(model: &mut Model, data: &Dataset, post: &TimePosterior) -> Result<()> {
    let stats = time_stats(post, data);
    update_regression(&mut model.reg, &model.hyper, &stats)
}

/// GP-dependent part of the bound: `Σ_j [−(N/2) ln|K_j| − ½ tr(K_j⁻¹ E_j)]`
/// with `E_j = Σ_n ⟨x_j x_jᵀ⟩` held fixed.
pub struct TimeGpObjective {
    n: f64,
    m: usize,
    t: usize,
    delta: f64,
    e: Vec<DMatrix<f64>>,
}

impl TimeGpObjective {
    /// Snapshot of the latent second moments of `post`.
    pub fn new(post: &TimePosterior, delta: f64) -> Self {
        Self {
            n: post.mu.len() as f64,
            m: post.m,
            t: post.t,
            delta,
            e: (0..post.p).map(|j| post.latent_second_moment(j)).collect(),
        }
    }

    fn latent_value(&self, gp: &GpParams, j: usize) -> Result<(f64, DMatrix<f64>)> {
        let k = build_K(&gp.kernel(j), self.m, self.t, self.delta);
        let (kinv, ld, _) = spd_inverse_logdet_jitter(&k)?;
        let tr = kinv.component_mul(&self.e[j]).sum();
        Ok((-0.5 * self.n * ld - 0.5 * tr, kinv))
    }
}

impl GpObjective for TimeGpObjective {
    fn value(&self, gp: &GpParams) -> Result<f64> {
        (0..gp.p()).map(|j| self.latent_value(gp, j).map(|v| v.0)).sum()
    }

    fn value_grad(&self, gp: &GpParams) -> Result<(f64, Vec<f64>)> {
        let (m, t) = (self.m, self.t);
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(gp.p() * m);
        for j in 0..gp.p() {
            let (v, kinv) = self.latent_value(gp, j)?;
            total += v;
            // G = K⁻¹ E K⁻¹ − N K⁻¹, so that dL = ½ tr(G dK).
            let mut g = &kinv * &self.e[j] * &kinv;
            g -= &kinv * self.n;
            let gamma = 1.0 / gp.tau[j].powi(2);
            let s2 = gp.sigma2[j];
            let d = &gp.delays[j];
            let mut dgamma = 0.0;
            let mut ddelay = vec![0.0; m];
            for a in 0..m * t {
                let (m1, t1) = (a / t, a % t);
                for b in 0..m * t {
                    let (m2, t2) = (b / t, b % t);
                    let dt = delayed_dt(t1, t2, d[m1], d[m2], self.delta);
                    dgamma += 0.5 * g[(a, b)] * se_dgamma(dt, gamma, s2);
                    if m1 != m2 {
                        // Row group m1 contributes +∂k/∂Δt; the symmetric entry doubles it.
                        ddelay[m1] += g[(a, b)] * se_ddt(dt, gamma, s2);
                    }
                }
            }
            grad.push(gamma * dgamma);
            grad.extend(ddelay.iter().skip(1));
        }
        Ok((total, grad))
    }
}

/// One backtracking gradient update of the GP parameters.
pub fn update_gp_time(model: &mut Model, post: &TimePosterior, optimizer: &mut GpOptimizer, steps: usize) -> Result<GpStep> {
    let obj = TimeGpObjective::new(post, model.delta);
    optimizer.run(&obj, &mut model.gp, model.delta, steps)
}

/// Lower bound under the time-domain posterior.
pub fn elbo_time(model: &Model, data: &Dataset, post: &TimePosterior) -> Result<f64> {
    elbo_time_with(model, post, &time_stats(post, data))
}

fn elbo_time_with(model: &Model, post: &TimePosterior, stats: &[SuffStats]) -> Result<f64> {
    let n = post.mu.len() as f64;
    let dim = (post.p * post.m * post.t) as f64;
    let gp_term = TimeGpObjective::new(post, model.delta).value(&model.gp)?;
    let neg_kl_x = 0.5 * n * dim + 0.5 * n * post.logdet + gp_term;
    Ok(expected_loglik(&model.reg, stats) + neg_kl_regression(&model.reg, &model.hyper) + neg_kl_x)
}

/// Fits with the time-domain method.
pub fn fit_time(data: &Dataset, config: &FitConfig) -> Result<FitReport> {
    let config = FitConfig { method: Method::Time, ..config.clone() };
    super::fit(data, &config)
}

pub(crate) struct TimeEngine<'a> {
    data: &'a Dataset,
    post: Option<TimePosterior>,
    stats: Vec<SuffStats>,
}

impl<'a> TimeEngine<'a> {
    pub(crate) fn new(data: &'a Dataset) -> Result<Self> {
        Ok(Self { data, post: None, stats: Vec::new() })
    }

    fn post(&self) -> &TimePosterior {
        self.post.as_ref().expect("latents inferred before use")
    }
}

impl Engine for TimeEngine<'_> {
    fn update_latents(&mut self, model: &Model) -> Result<()> {
        let post = update_qx_time(model, self.data)?;
        self.stats = time_stats(&post, self.data);
        self.post = Some(post);
        Ok(())
    }

    fn stats(&self, _model: &Model) -> Result<Vec<SuffStats>> {
        Ok(self.stats.clone())
    }

    fn gp_objective(&self, model: &Model) -> Result<Box<dyn GpObjective + '_>> {
        Ok(Box::new(TimeGpObjective::new(self.post(), model.delta)))
    }

    fn elbo(&self, model: &Model) -> Result<f64> {
        elbo_time_with(model, self.post(), &self.stats)
    }

    fn latents(&self) -> LatentPosterior {
        LatentPosterior::Time(self.post().clone())
    }
}
