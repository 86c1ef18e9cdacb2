//! Inference through inducing variables on a fixed uniform grid.
//!
//! Each latent is summarized by its values `w_j` at `T_ind` inducing
//! locations; the latents at the observed samples follow from the GP
//! conditional `x | w`. Inducing variables are stacked latent-major:
//! entry `j·T_ind + i` is latent `j` at location `ξ_i`.

use nalgebra::{DMatrix, DVector};

use super::{Engine, FitConfig, FitReport, GpObjective, GpOptimizer, GpStep, LatentPosterior, Method};
use crate::data::Dataset;
use crate::error::Result;
use crate::kernels::{build_Kw, build_Kxw, inducing_dt, se_ddt, se_dgamma, InducingGrid};
use crate::numerics::spd_inverse_logdet_jitter;
use crate::state::{
    data_stats, expected_loglik, neg_kl_regression, update_regression, GpParams, Model, SuffStats,
};

/// Kernel matrices of every latent for the current GP parameters.
#[derive(Debug, Clone)]
pub struct InducingCaches {
    /// `K^w_j`.
    pub kw: Vec<DMatrix<f64>>,
    /// `(K^w_j)⁻¹`.
    pub kw_inv: Vec<DMatrix<f64>>,
    /// `ln |K^w_j|`.
    pub kw_logdet: Vec<f64>,
    /// `K^{xw}_j` (`MT × T_ind`, rows `m·T + t`).
    pub kxw: Vec<DMatrix<f64>>,
    /// Interpolation weights `K^{xw}_j (K^w_j)⁻¹`.
    pub a: Vec<DMatrix<f64>>,
    /// Conditional prior variance `1 − k^{xw} (K^w)⁻¹ k^{wx}` of every row.
    pub cond_var: Vec<DVector<f64>>,
}

impl InducingCaches {
    /// Builds the caches for `gp` on `grid`.
    pub fn new(gp: &GpParams, m: usize, t: usize, grid: &InducingGrid, delta: f64) -> Result<Self> {
        let p = gp.p();
        let mut out = Self {
            kw: Vec::with_capacity(p),
            kw_inv: Vec::with_capacity(p),
            kw_logdet: Vec::with_capacity(p),
            kxw: Vec::with_capacity(p),
            a: Vec::with_capacity(p),
            cond_var: Vec::with_capacity(p),
        };
        for j in 0..p {
            let kernel = gp.kernel(j);
            let kw = build_Kw(&kernel, grid, delta);
            let (kw_inv, ld, _) = spd_inverse_logdet_jitter(&kw)?;
            let kxw = build_Kxw(&kernel, m, t, grid, delta);
            let a = &kxw * &kw_inv;
            let cond = DVector::from_fn(m * t, |r, _| 1.0 - kxw.row(r).dot(&a.row(r)));
            out.kw.push(kw);
            out.kw_inv.push(kw_inv);
            out.kw_logdet.push(ld);
            out.kxw.push(kxw);
            out.a.push(a);
            out.cond_var.push(cond);
        }
        Ok(out)
    }

    /// Interpolation weights of latent `j` for the rows of group `g`.
    pub fn a_block(&self, j: usize, g: usize, t: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.a[j].rows(g * t, t)
    }
}

/// Posterior over the inducing variables of every trial.
#[derive(Debug, Clone)]
pub struct InducingPosterior {
    /// Inducing grid.
    pub grid: InducingGrid,
    /// Latents.
    pub p: usize,
    /// Groups.
    pub m: usize,
    /// Samples per trial.
    pub t: usize,
    /// Posterior mean of each trial (length `p·T_ind`).
    pub mu_w: Vec<DVector<f64>>,
    /// Posterior covariance shared by all trials.
    pub sigma_w: DMatrix<f64>,
    /// `ln |Σ̄_w|`.
    pub logdet: f64,
}

impl InducingPosterior {
    fn t_ind(&self) -> usize {
        self.grid.len()
    }

    /// `W = N Σ̄_w + Σ_n μ̄_{w_n} μ̄_{w_n}ᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let means = DMatrix::from_columns(&self.mu_w);
        &self.sigma_w * self.mu_w.len() as f64 + &means * means.transpose()
    }

    /// Mean of `w_j` for trial `n`.
    pub fn w_mean(&self, n: usize, j: usize) -> DVector<f64> {
        self.mu_w[n].rows(j * self.t_ind(), self.t_ind()).into_owned()
    }
}

/// Latent first moments `⟨x⟩ = K^{xw}(K^w)⁻¹⟨w⟩` of trial `n`, group `g`
/// (`p × T`).
pub fn latent_means_from_w(post: &InducingPosterior, caches: &InducingCaches, n: usize, g: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(post.p, post.t);
    for j in 0..post.p {
        let x = caches.a_block(j, g, post.t) * post.w_mean(n, j);
        out.set_row(j, &x.transpose());
    }
    out
}

/// Latent covariance `Cov(x_{m,t})` (`p × p`) at one (group, sample) slice:
/// `δ_jk (1 − k^{xw}_j (K^w_j)⁻¹ k^{wx}_j) + a_jᵀ Σ̄_w[j,k] a_k`.
pub fn latent_cov_slice(post: &InducingPosterior, caches: &InducingCaches, g: usize, t: usize) -> DMatrix<f64> {
    let ti = post.t_ind();
    let row = g * post.t + t;
    DMatrix::from_fn(post.p, post.p, |j, k| {
        let aj = caches.a[j].row(row);
        let ak = caches.a[k].row(row);
        let block = post.sigma_w.view((j * ti, k * ti), (ti, ti));
        let v = (aj * block * ak.transpose())[(0, 0)];
        if j == k {
            v + caches.cond_var[j][row]
        } else {
            v
        }
    })
}

/// `⟨C⟩ᵀ⟨Φ⟩(y − ⟨d⟩)` of trial `n`, group `g` (`p × T`).
fn projected(model: &Model, data: &Dataset, n: usize, g: usize) -> DMatrix<f64> {
    let rows = data.group_rows(g);
    let mut centered = data.trials[n].rows(rows.start, rows.len()).into_owned();
    let d = &model.reg.groups[g].mu_d;
    for mut col in centered.column_iter_mut() {
        col -= d;
    }
    model.reg.ct_phi(g) * centered
}

/// `Σ_{m,t} a_j a_kᵀ` per group: `G^m_{jk} = A_j^{mᵀ} A_k^m`.
fn gram(caches: &InducingCaches, g: usize, t: usize, j: usize, k: usize) -> DMatrix<f64> {
    caches.a_block(j, g, t).transpose() * caches.a_block(k, g, t)
}

/// Posterior over inducing variables from the groups listed in `use_groups`.
pub(crate) fn update_qw_groups(
    model: &Model,
    data: &Dataset,
    grid: &InducingGrid,
    caches: &InducingCaches,
    use_groups: &[usize],
) -> Result<InducingPosterior> {
    let (p, m, t) = (model.p(), model.m(), data.t);
    let ti = grid.len();
    let mut prec = DMatrix::zeros(p * ti, p * ti);
    for j in 0..p {
        prec.view_mut((j * ti, j * ti), (ti, ti)).copy_from(&caches.kw_inv[j]);
    }
    for &g in use_groups {
        let psi = model.reg.ctphic(g);
        for j in 0..p {
            for k in j..p {
                let blk = gram(caches, g, t, j, k) * psi[(j, k)];
                let mut v = prec.view_mut((j * ti, k * ti), (ti, ti));
                v += &blk;
                if k != j {
                    let mut v = prec.view_mut((k * ti, j * ti), (ti, ti));
                    v += blk.transpose();
                }
            }
        }
    }
    let (sigma_w, ld_prec, _) = spd_inverse_logdet_jitter(&prec)?;
    let mut rhs = DMatrix::zeros(p * ti, data.n());
    for n in 0..data.n() {
        for &g in use_groups {
            let b = projected(model, data, n, g);
            for j in 0..p {
                let h = caches.a_block(j, g, t).transpose() * b.row(j).transpose();
                let mut col = rhs.view_mut((j * ti, n), (ti, 1));
                col += h;
            }
        }
    }
    let mu_all = &sigma_w * rhs;
    Ok(InducingPosterior {
        grid: grid.clone(),
        p,
        m,
        t,
        mu_w: (0..data.n()).map(|n| mu_all.column(n).into_owned()).collect(),
        sigma_w,
        logdet: -ld_prec,
    })
}

/// Posterior over inducing variables given every group.
pub fn update_qw(model: &Model, data: &Dataset, grid: &InducingGrid) -> Result<InducingPosterior> {
    model.check_dataset(data)?;
    let caches = InducingCaches::new(&model.gp, model.m(), data.t, grid, data.delta)?;
    let all: Vec<usize> = (0..model.m()).collect();
    update_qw_groups(model, data, grid, &caches, &all)
}

/// Latent statistics feeding the regression updates.
pub fn inducing_stats(post: &InducingPosterior, caches: &InducingCaches, data: &Dataset) -> Vec<SuffStats> {
    let (p, t) = (post.p, post.t);
    let ti = post.t_ind();
    let n = data.n();
    let w = post.second_moment();
    (0..post.m)
        .map(|g| {
            let rows = data.group_rows(g);
            let (sy, syy) = data_stats(data, g);
            let mut s = SuffStats::zeros(p, sy, syy, (n * t) as f64);
            for k in 0..n {
                let x = latent_means_from_w(post, caches, k, g);
                let y = data.trials[k].rows(rows.start, rows.len());
                s.sxy += &x * y.transpose();
                s.sx += x.column_sum();
            }
            for j in 0..p {
                for k in j..p {
                    let v = w.view((j * ti, k * ti), (ti, ti)).component_mul(&gram(caches, g, t, j, k)).sum();
                    s.sxx[(j, k)] = v;
                    s.sxx[(k, j)] = v;
                }
                s.sxx[(j, j)] += n as f64 * caches.cond_var[j].rows(g * t, t).sum();
            }
            s
        })
        .collect()
}

/// Regression-factor updates from inducing-variable latent moments.
pub fn update_regression_factors_inducing(model: &mut Model, data: &Dataset, post: &InducingPosterior) -> Result<()> {
    let caches = InducingCaches::new(&model.gp, model.m(), data.t, &post.grid, data.delta)?;
    let stats = inducing_stats(post, &caches, data);
    update_regression(&mut model.reg, &model.hyper, &stats)
}

/// GP-dependent part of the bound with `Q(w)` and the regression factors
/// held fixed.
pub struct InducingGpObjective {
    n: f64,
    m: usize,
    t: usize,
    delta: f64,
    grid: InducingGrid,
    psi: Vec<DMatrix<f64>>,
    w: DMatrix<f64>,
    /// `B[g][j] = Σ_n b_{n,g,j} μ̄_{w_{n,j}}ᵀ` (`T × T_ind`).
    b: Vec<Vec<DMatrix<f64>>>,
}

impl InducingGpObjective {
    /// Snapshot of the moments of `post` and the regression factors of `model`.
    pub fn new(model: &Model, data: &Dataset, post: &InducingPosterior) -> Self {
        let (p, m, t) = (post.p, post.m, post.t);
        let ti = post.t_ind();
        let mut b = vec![vec![DMatrix::zeros(t, ti); p]; m];
        for n in 0..data.n() {
            for (g, bg) in b.iter_mut().enumerate() {
                let proj = projected(model, data, n, g);
                for (j, bgj) in bg.iter_mut().enumerate() {
                    *bgj += proj.row(j).transpose() * post.w_mean(n, j).transpose();
                }
            }
        }
        Self {
            n: data.n() as f64,
            m,
            t,
            delta: data.delta,
            grid: post.grid.clone(),
            psi: (0..m).map(|g| model.reg.ctphic(g)).collect(),
            w: post.second_moment(),
            b,
        }
    }

    fn ti(&self) -> usize {
        self.grid.len()
    }

    fn w_block(&self, j: usize, k: usize) -> nalgebra::DMatrixView<'_, f64> {
        let ti = self.ti();
        self.w.view((j * ti, k * ti), (ti, ti))
    }

    fn value_with(&self, caches: &InducingCaches, p: usize) -> f64 {
        let t = self.t;
        let mut total = 0.0;
        for g in 0..self.m {
            let psi = &self.psi[g];
            for j in 0..p {
                total += caches.a_block(j, g, t).component_mul(&self.b[g][j]).sum();
                total -= 0.5 * psi[(j, j)] * self.n * caches.cond_var[j].rows(g * t, t).sum();
                for k in 0..p {
                    let sxx = self.w_block(j, k).component_mul(&gram(caches, g, t, j, k)).sum();
                    total -= 0.5 * psi[(j, k)] * sxx;
                }
            }
        }
        for j in 0..p {
            total -= 0.5 * (self.n * caches.kw_logdet[j] + caches.kw_inv[j].component_mul(&self.w_block(j, j)).sum());
        }
        total
    }
}

impl GpObjective for InducingGpObjective {
    fn value(&self, gp: &GpParams) -> Result<f64> {
        let caches = InducingCaches::new(gp, self.m, self.t, &self.grid, self.delta)?;
        Ok(self.value_with(&caches, gp.p()))
    }

    fn value_grad(&self, gp: &GpParams) -> Result<(f64, Vec<f64>)> {
        let (m, t, p) = (self.m, self.t, gp.p());
        let ti = self.ti();
        let caches = InducingCaches::new(gp, m, t, &self.grid, self.delta)?;
        let value = self.value_with(&caches, p);
        let mut grad = Vec::with_capacity(p * m);
        for j in 0..p {
            let gamma = 1.0 / gp.tau[j].powi(2);
            let s2 = gp.sigma2[j];
            let kw_inv = &caches.kw_inv[j];
            let mut d_kw = kw_inv * self.w_block(j, j) * kw_inv * 0.5 - kw_inv * (0.5 * self.n);
            let mut dgamma = 0.0;
            let mut ddelay = vec![0.0; m];
            for g in 0..m {
                let psi = &self.psi[g];
                let a_j = caches.a_block(j, g, t);
                let kxw_j = caches.kxw[j].rows(g * t, t);
                let mut d_a = self.b[g][j].clone() + kxw_j * (0.5 * self.n * psi[(j, j)]);
                for k in 0..p {
                    d_a -= caches.a_block(k, g, t) * self.w_block(k, j) * psi[(j, k)];
                }
                let u = d_a * kw_inv;
                d_kw -= u.transpose() * a_j;
                let d_kxw = u + a_j * (0.5 * self.n * psi[(j, j)]);
                let dg = gp.delays[j][g];
                for s in 0..t {
                    for i in 0..ti {
                        let dt = inducing_dt(s, self.grid.xi[i], dg, self.delta);
                        dgamma += d_kxw[(s, i)] * se_dgamma(dt, gamma, s2);
                        ddelay[g] += d_kxw[(s, i)] * se_ddt(dt, gamma, s2);
                    }
                }
            }
            for a in 0..ti {
                for b in 0..ti {
                    let dt = (self.grid.xi[b] - self.grid.xi[a]) * self.delta;
                    dgamma += d_kw[(a, b)] * se_dgamma(dt, gamma, s2);
                }
            }
            grad.push(gamma * dgamma);
            grad.extend(ddelay.iter().skip(1));
        }
        Ok((value, grad))
    }
}

/// One backtracking gradient update of the GP parameters.
pub fn update_gp_inducing(
    model: &mut Model,
    data: &Dataset,
    post: &InducingPosterior,
    optimizer: &mut GpOptimizer,
    steps: usize,
) -> Result<GpStep> {
    let obj = InducingGpObjective::new(model, data, post);
    optimizer.run(&obj, &mut model.gp, model.delta, steps)
}

/// Lower bound under the inducing-variable posterior.
pub fn elbo_inducing(model: &Model, data: &Dataset, post: &InducingPosterior) -> Result<f64> {
    let caches = InducingCaches::new(&model.gp, model.m(), data.t, &post.grid, data.delta)?;
    elbo_inducing_with(model, post, &caches, &inducing_stats(post, &caches, data))
}

fn elbo_inducing_with(model: &Model, post: &InducingPosterior, caches: &InducingCaches, stats: &[SuffStats]) -> Result<f64> {
    let n = post.mu_w.len() as f64;
    let ti = post.t_ind();
    let w = post.second_moment();
    let mut neg_kl_w = 0.5 * n * (post.p * ti) as f64 + 0.5 * n * post.logdet;
    for j in 0..post.p {
        let wjj = w.view((j * ti, j * ti), (ti, ti));
        neg_kl_w -= 0.5 * (n * caches.kw_logdet[j] + caches.kw_inv[j].component_mul(&wjj).sum());
    }
    Ok(expected_loglik(&model.reg, stats) + neg_kl_regression(&model.reg, &model.hyper) + neg_kl_w)
}

/// Fits with the inducing-variable method.
pub fn fit_inducing(data: &Dataset, config: &FitConfig) -> Result<FitReport> {
    let config = FitConfig { method: Method::Inducing, ..config.clone() };
    super::fit(data, &config)
}

pub(crate) struct InducingEngine<'a> {
    data: &'a Dataset,
    grid: InducingGrid,
    post: Option<(InducingPosterior, InducingCaches)>,
    stats: Vec<SuffStats>,
}

impl<'a> InducingEngine<'a> {
    pub(crate) fn new(data: &'a Dataset, t_ind: usize) -> Result<Self> {
        Ok(Self { data, grid: InducingGrid::uniform(t_ind, data.t)?, post: None, stats: Vec::new() })
    }

    fn post(&self) -> &(InducingPosterior, InducingCaches) {
        self.post.as_ref().expect("latents inferred before use")
    }
}

impl Engine for InducingEngine<'_> {
    fn update_latents(&mut self, model: &Model) -> Result<()> {
        let caches = InducingCaches::new(&model.gp, model.m(), self.data.t, &self.grid, self.data.delta)?;
        let all: Vec<usize> = (0..model.m()).collect();
        let post = update_qw_groups(model, self.data, &self.grid, &caches, &all)?;
        self.stats = inducing_stats(&post, &caches, self.data);
        self.post = Some((post, caches));
        Ok(())
    }

    fn stats(&self, _model: &Model) -> Result<Vec<SuffStats>> {
        Ok(self.stats.clone())
    }

    fn gp_objective(&self, model: &Model) -> Result<Box<dyn GpObjective + '_>> {
        Ok(Box::new(InducingGpObjective::new(model, self.data, &self.post().0)))
    }

    fn elbo(&self, model: &Model) -> Result<f64> {
        elbo_inducing_with(model, &self.post().0, &self.post().1, &self.stats)
    }

    fn latents(&self) -> LatentPosterior {
        LatentPosterior::Inducing(self.post().0.clone())
    }
}
