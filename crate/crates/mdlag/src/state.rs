//! Model parameters and posterior moments shared by the three fitters,
//! initialization, the regression-factor updates and the parts of the
//! lower bound that do not involve the latents.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

use crate::data::{group_offsets, Dataset};
use crate::error::{MdlagError, Result};
use crate::kernels::{SqExpDelayed, DEFAULT_SIGMA2};

/// Default value of every prior hyperparameter.
pub const DEFAULT_HYPER: f64 = 1e-12;

/// Default ν threshold for calling a latent significant.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.02;

/// Scale of the initial loading covariance relative to the initial loading
/// variance. Kept small so the initial second moments are essentially the
/// outer products of the means while the entropy stays finite.
const INIT_LOADING_COV: f64 = 1e-6;

/// Prior hyperparameters: mean precision `β`, noise-precision Gamma
/// `(a_φ, b_φ)` and ARD Gamma `(a_α, b_α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub beta: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_HYPER,
            a_phi: DEFAULT_HYPER,
            b_phi: DEFAULT_HYPER,
            a_alpha: DEFAULT_HYPER,
            b_alpha: DEFAULT_HYPER,
        }
    }
}

impl Hyperparams {
    /// Checks that every hyperparameter is positive and finite.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("a_phi", self.a_phi),
            ("b_phi", self.b_phi),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MdlagError::Config(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Gaussian-process parameters of every latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    /// Timescale of each latent (ms).
    pub tau: Vec<f64>,
    /// White-noise variance of each latent.
    pub sigma2: Vec<f64>,
    /// `delays[j][m]`: delay of latent `j` in group `m` (ms); `delays[j][0] = 0`.
    pub delays: Vec<Vec<f64>>,
    /// Bound on the magnitude of every delay (ms).
    pub d_max: f64,
}

impl GpParams {
    /// `p` latents over `m` groups with common timescale and zero delays.
    pub fn new(p: usize, m: usize, tau: f64, d_max: f64) -> Self {
        Self { tau: vec![tau; p], sigma2: vec![DEFAULT_SIGMA2; p], delays: vec![vec![0.0; m]; p], d_max }
    }

    /// Number of latents.
    pub fn p(&self) -> usize {
        self.tau.len()
    }

    /// Number of groups.
    pub fn m(&self) -> usize {
        self.delays.first().map_or(0, Vec::len)
    }

    /// Kernel of latent `j`.
    pub fn kernel(&self, j: usize) -> SqExpDelayed {
        SqExpDelayed { tau: self.tau[j], sigma2: self.sigma2[j], delays: self.delays[j].clone() }
    }

    /// Delays of every latent for group `m`.
    pub fn group_delays(&self, m: usize) -> Vec<f64> {
        self.delays.iter().map(|d| d[m]).collect()
    }

    /// Unconstrained coordinates: per latent `ln γ_j` followed by
    /// `D̂_j^m = 2 atanh(D_j^m / D_max)` for `m ≥ 1`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(self.p() * m);
        for j in 0..self.p() {
            out.push(-2.0 * self.tau[j].ln());
            for g in 1..m {
                let r = (self.delays[j][g] / self.d_max).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                out.push(2.0 * r.atanh());
            }
        }
        out
    }

    /// Inverse of [`GpParams::to_unconstrained`].
    pub fn set_unconstrained(&mut self, theta: &[f64]) {
        let m = self.m();
        for j in 0..self.p() {
            let base = j * m;
            self.tau[j] = (-0.5 * theta[base]).exp();
            for g in 1..m {
                self.delays[j][g] = self.d_max * (0.5 * theta[base + g]).tanh();
            }
        }
    }

    /// `dD/dD̂` for each delay coordinate in the unconstrained layout
    /// (entries for `ln γ` are 1).
    pub fn chain_factors(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(self.p() * m);
        for j in 0..self.p() {
            out.push(1.0);
            for g in 1..m {
                let r = self.delays[j][g] / self.d_max;
                out.push(0.5 * self.d_max * (1.0 - r * r));
            }
        }
        out
    }

    /// Checks positivity, the pinned first delay and the delay bound.
    pub fn validate(&self) -> Result<()> {
        if self.tau.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(MdlagError::Config("timescales must be positive".into()));
        }
        if self.delays.len() != self.p() || self.sigma2.len() != self.p() {
            return Err(MdlagError::Dimension("GP parameter lengths disagree".into()));
        }
        for d in &self.delays {
            if d.len() != self.m() || d[0] != 0.0 || d.iter().any(|x| x.abs() > self.d_max) {
                return Err(MdlagError::Config("delays must start at 0 and stay within ±D_max".into()));
            }
        }
        Ok(())
    }
}

/// Posterior moments of one group's mean, noise precisions, loadings and
/// ARD precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPosterior {
    /// Mean of `d` (length `q_m`).
    pub mu_d: DVector<f64>,
    /// Variances of `d` (its covariance is diagonal).
    pub sigma_d: DVector<f64>,
    /// Rate parameters of the noise precisions (length `q_m`).
    pub b_phi: DVector<f64>,
    /// Loading means, one row per unit (`q_m × p`).
    pub mu_c: DMatrix<f64>,
    /// Loading covariance of each unit (`p × p`).
    pub sigma_c: Vec<DMatrix<f64>>,
    /// Shape parameter shared by the ARD precisions of this group.
    pub a_alpha: f64,
    /// Rate parameter of each ARD precision (length `p`).
    pub b_alpha: DVector<f64>,
}

impl GroupPosterior {
    /// Number of units.
    pub fn q(&self) -> usize {
        self.mu_d.len()
    }

    /// Number of latents.
    pub fn p(&self) -> usize {
        self.mu_c.ncols()
    }

    /// `⟨α_j⟩`.
    pub fn alpha_mean(&self) -> DVector<f64> {
        self.b_alpha.map(|b| self.a_alpha / b)
    }

    /// `⟨ln α_j⟩`.
    pub fn log_alpha_mean(&self) -> DVector<f64> {
        let psi = digamma(self.a_alpha);
        self.b_alpha.map(|b| psi - b.ln())
    }

    /// `⟨‖c_j‖²⟩` for each latent column.
    pub fn column_sq_norms(&self) -> DVector<f64> {
        let p = self.p();
        DVector::from_fn(p, |j, _| {
            (0..self.q()).map(|r| self.mu_c[(r, j)].powi(2) + self.sigma_c[r][(j, j)]).sum()
        })
    }

    /// `⟨c_r c_rᵀ⟩`.
    pub fn loading_second_moment(&self, r: usize) -> DMatrix<f64> {
        let mu = self.mu_c.row(r).transpose();
        &self.sigma_c[r] + &mu * mu.transpose()
    }

    /// `⟨d_r²⟩` for each unit.
    pub fn d_second_moment(&self) -> DVector<f64> {
        self.mu_d.zip_map(&self.sigma_d, |m, s| m * m + s)
    }
}

/// Posterior over every non-latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPosterior {
    /// Shape parameter shared by every noise precision.
    pub a_phi: f64,
    /// Per-group moments.
    pub groups: Vec<GroupPosterior>,
}

impl RegressionPosterior {
    /// `⟨φ_r⟩` for group `m`.
    pub fn phi_mean(&self, m: usize) -> DVector<f64> {
        self.groups[m].b_phi.map(|b| self.a_phi / b)
    }

    /// `⟨ln φ_r⟩` for group `m`.
    pub fn log_phi_mean(&self, m: usize) -> DVector<f64> {
        let psi = digamma(self.a_phi);
        self.groups[m].b_phi.map(|b| psi - b.ln())
    }

    /// `⟨Cᵀ Φ C⟩` for group `m` (`p × p`).
    pub fn ctphic(&self, m: usize) -> DMatrix<f64> {
        let g = &self.groups[m];
        let phi = self.phi_mean(m);
        let p = g.p();
        let mut out = DMatrix::zeros(p, p);
        for r in 0..g.q() {
            out += g.loading_second_moment(r) * phi[r];
        }
        out
    }

    /// `⟨C⟩ᵀ ⟨Φ⟩` for group `m` (`p × q_m`).
    pub fn ct_phi(&self, m: usize) -> DMatrix<f64> {
        let g = &self.groups[m];
        let phi = self.phi_mean(m);
        let mut out = g.mu_c.transpose();
        for r in 0..g.q() {
            out.column_mut(r).scale_mut(phi[r]);
        }
        out
    }
}

/// A fitted (or initialized) model: everything needed for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// Units per group.
    pub groups: Vec<usize>,
    /// Sampling period in ms.
    pub delta: f64,
    /// Prior hyperparameters.
    pub hyper: Hyperparams,
    /// GP parameters.
    pub gp: GpParams,
    /// Posterior over mean, noise, loadings and ARD precisions.
    pub reg: RegressionPosterior,
}

impl Model {
    /// Number of latents.
    pub fn p(&self) -> usize {
        self.gp.p()
    }

    /// Number of groups.
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    /// Total number of units.
    pub fn q(&self) -> usize {
        self.groups.iter().sum()
    }

    /// Row offsets of each group.
    pub fn offsets(&self) -> Vec<usize> {
        group_offsets(&self.groups)
    }

    /// Checks that every component agrees on `p`, `M` and `q_m`.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.gp.validate()?;
        if self.reg.groups.len() != self.m() || self.gp.m() != self.m() {
            return Err(MdlagError::Dimension("group count mismatch in model".into()));
        }
        for (g, &q) in self.reg.groups.iter().zip(&self.groups) {
            if g.q() != q || g.p() != self.p() || g.sigma_c.len() != q || g.b_alpha.len() != self.p() {
                return Err(MdlagError::Dimension("posterior shapes disagree with model dimensions".into()));
            }
        }
        Ok(())
    }

    /// Checks that a dataset has the same group layout.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.groups != self.groups {
            return Err(MdlagError::Dimension(format!(
                "dataset groups {:?} differ from model groups {:?}",
                data.groups, self.groups
            )));
        }
        Ok(())
    }
}

/// Moments of the latents that the regression updates need, accumulated
/// over trials and samples (or frequencies) for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    /// `Σ ⟨x xᵀ⟩` (`p × p`).
    pub sxx: DMatrix<f64>,
    /// `Σ ⟨x⟩ yᵀ` (`p × q_m`).
    pub sxy: DMatrix<f64>,
    /// `Σ ⟨x⟩` (`p`).
    pub sx: DVector<f64>,
    /// `Σ y` per unit.
    pub sy: DVector<f64>,
    /// `Σ y²` per unit.
    pub syy: DVector<f64>,
    /// Number of (trial, sample) pairs `N·T`.
    pub count: f64,
}

impl SuffStats {
    /// Zero latent statistics with the given data statistics.
    pub fn zeros(p: usize, sy: DVector<f64>, syy: DVector<f64>, count: f64) -> Self {
        let q = sy.len();
        Self { sxx: DMatrix::zeros(p, p), sxy: DMatrix::zeros(p, q), sx: DVector::zeros(p), sy, syy, count }
    }
}

/// Per-unit `Σ y` and `Σ y²` over trials and samples for group `m`.
pub fn data_stats(data: &Dataset, m: usize) -> (DVector<f64>, DVector<f64>) {
    let rows = data.group_rows(m);
    let q = rows.len();
    let mut sy = DVector::zeros(q);
    let mut syy = DVector::zeros(q);
    for y in &data.trials {
        for (i, r) in rows.clone().enumerate() {
            sy[i] += y.row(r).sum();
            syy[i] += y.row(r).iter().map(|v| v * v).sum::<f64>();
        }
    }
    (sy, syy)
}

/// Expected squared residual `Σ_{n,t} ⟨(y − cᵀx − d)²⟩` of every unit.
pub fn expected_residuals(g: &GroupPosterior, s: &SuffStats) -> DVector<f64> {
    let d2 = g.d_second_moment();
    DVector::from_fn(g.q(), |r, _| {
        let cc = g.loading_second_moment(r);
        let mu_c = g.mu_c.row(r).transpose();
        let cross = mu_c.dot(&(s.sxy.column(r) - &s.sx * g.mu_d[r]));
        s.syy[r] + s.count * d2[r] + cc.component_mul(&s.sxx).sum() - 2.0 * cross - 2.0 * g.mu_d[r] * s.sy[r]
    })
}

/// Coordinate-ascent updates of `Q(d)`, `Q(C)`, `Q(α)` and `Q(φ)` for every
/// group, in that order, given the latent statistics.
pub fn update_regression(reg: &mut RegressionPosterior, hyper: &Hyperparams, stats: &[SuffStats]) -> Result<()> {
    let count = stats.first().map_or(0.0, |s| s.count);
    reg.a_phi = hyper.a_phi + 0.5 * count;
    for (m, s) in stats.iter().enumerate() {
        let phi = reg.phi_mean(m);
        let g = &mut reg.groups[m];
        let q = g.q();
        let p = g.p();
        for r in 0..q {
            let prec = hyper.beta + s.count * phi[r];
            g.sigma_d[r] = 1.0 / prec;
            let mu_c = g.mu_c.row(r).transpose();
            g.mu_d[r] = phi[r] * (s.sy[r] - mu_c.dot(&s.sx)) / prec;
        }
        let alpha = g.alpha_mean();
        for r in 0..q {
            let mut prec = &s.sxx * phi[r];
            for j in 0..p {
                prec[(j, j)] += alpha[j];
            }
            let (cov, _, _) = crate::numerics::spd_inverse_logdet_jitter(&prec)?;
            let rhs = (s.sxy.column(r) - &s.sx * g.mu_d[r]) * phi[r];
            let mean = &cov * rhs;
            g.mu_c.set_row(r, &mean.transpose());
            g.sigma_c[r] = cov;
        }
        g.a_alpha = hyper.a_alpha + 0.5 * q as f64;
        let norms = g.column_sq_norms();
        g.b_alpha = norms.map(|v| hyper.b_alpha + 0.5 * v);
        let resid = expected_residuals(g, s);
        g.b_phi = resid.map(|v| hyper.b_phi + 0.5 * v);
    }
    Ok(())
}

/// Expected log-likelihood `Σ ⟨ln P(y | x, C, d, φ)⟩` of all groups.
pub fn expected_loglik(reg: &RegressionPosterior, stats: &[SuffStats]) -> f64 {
    let mut total = 0.0;
    for (m, s) in stats.iter().enumerate() {
        let g = &reg.groups[m];
        let phi = reg.phi_mean(m);
        let log_phi = reg.log_phi_mean(m);
        let resid = expected_residuals(g, s);
        for r in 0..g.q() {
            total += -0.5 * s.count * (2.0 * PI).ln() + 0.5 * s.count * log_phi[r] - 0.5 * phi[r] * resid[r];
        }
    }
    total
}

/// `KL(Γ(a1, b1) ‖ Γ(a0, b0))` in the shape–rate parameterization.
pub fn kl_gamma(a1: f64, b1: f64, a0: f64, b0: f64) -> f64 {
    (a1 - a0) * digamma(a1) - ln_gamma(a1) + ln_gamma(a0) + a0 * (b1.ln() - b0.ln()) + a1 * (b0 - b1) / b1
}

/// `−KL(Q(C) ‖ P(C | α))` averaged over `Q(α)`, for every group.
pub fn neg_kl_loadings(reg: &RegressionPosterior) -> f64 {
    let mut total = 0.0;
    for g in &reg.groups {
        let p = g.p() as f64;
        let q = g.q() as f64;
        let alpha = g.alpha_mean();
        let log_alpha = g.log_alpha_mean();
        let norms = g.column_sq_norms();
        for cov in &g.sigma_c {
            let ld = crate::numerics::spd_logdet_jitter(cov).unwrap_or(f64::NEG_INFINITY);
            total += 0.5 * p + 0.5 * ld;
        }
        for j in 0..g.p() {
            total += 0.5 * q * log_alpha[j] - 0.5 * alpha[j] * norms[j];
        }
    }
    total
}

/// `−KL(Q(α) ‖ P(α))` for every group.
pub fn neg_kl_ard(reg: &RegressionPosterior, hyper: &Hyperparams) -> f64 {
    reg.groups
        .iter()
        .flat_map(|g| g.b_alpha.iter().map(move |&b| -kl_gamma(g.a_alpha, b, hyper.a_alpha, hyper.b_alpha)))
        .sum()
}

/// `−KL(Q(φ) ‖ P(φ))` for every unit.
pub fn neg_kl_noise(reg: &RegressionPosterior, hyper: &Hyperparams) -> f64 {
    reg.groups
        .iter()
        .flat_map(|g| g.b_phi.iter().map(|&b| -kl_gamma(reg.a_phi, b, hyper.a_phi, hyper.b_phi)))
        .sum()
}

/// `−KL(Q(d) ‖ P(d))` for every unit.
pub fn neg_kl_mean(reg: &RegressionPosterior, hyper: &Hyperparams) -> f64 {
    let mut total = 0.0;
    for g in &reg.groups {
        let d2 = g.d_second_moment();
        for r in 0..g.q() {
            total += 0.5 * (1.0 + (hyper.beta * g.sigma_d[r]).ln() - hyper.beta * d2[r]);
        }
    }
    total
}

/// Sum of the negative KL divergences of `Q(C)`, `Q(α)`, `Q(φ)` and `Q(d)`
/// from their priors.
pub fn neg_kl_regression(reg: &RegressionPosterior, hyper: &Hyperparams) -> f64 {
    neg_kl_loadings(reg) + neg_kl_ard(reg, hyper) + neg_kl_noise(reg, hyper) + neg_kl_mean(reg, hyper)
}

/// Initial model: per-unit sample means for `d`, inverse sample variances
/// for `⟨φ⟩`, Gaussian random loadings with variance (unit variance)/p,
/// `⟨α_j^m⟩ = q_m / ⟨‖c_j^m‖²⟩`, zero delays and timescales of `2δ`.
pub fn initialize(data: &Dataset, p: usize, seed: u64, hyper: &Hyperparams) -> Result<Model> {
    data.validate()?;
    hyper.validate()?;
    if p == 0 {
        return Err(MdlagError::Config("latent count must be at least 1".into()));
    }
    let (mean, var) = data.unit_moments();
    if let Some(unit) = var.iter().position(|v| *v <= 0.0) {
        return Err(MdlagError::DegenerateVariance { unit });
    }
    let count = (data.n() * data.t) as f64;
    let a_phi = hyper.a_phi + 0.5 * count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = data.offsets();
    let mut groups = Vec::with_capacity(data.m());
    for m in 0..data.m() {
        let q = data.groups[m];
        let rows = offsets[m]..offsets[m + 1];
        let mu_d = DVector::from_iterator(q, rows.clone().map(|r| mean[r]));
        let sigma_d = DVector::from_iterator(q, rows.clone().map(|r| var[r] / count));
        let b_phi = DVector::from_iterator(q, rows.clone().map(|r| a_phi * var[r]));
        let mut mu_c = DMatrix::zeros(q, p);
        let mut sigma_c = Vec::with_capacity(q);
        for (i, r) in rows.enumerate() {
            let sd = (var[r] / p as f64).sqrt();
            for j in 0..p {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu_c[(i, j)] = sd * z;
            }
            sigma_c.push(DMatrix::from_diagonal_element(p, p, INIT_LOADING_COV * var[r] / p as f64));
        }
        let mut g = GroupPosterior {
            mu_d,
            sigma_d,
            b_phi,
            mu_c,
            sigma_c,
            a_alpha: hyper.a_alpha + 0.5 * q as f64,
            b_alpha: DVector::zeros(p),
        };
        let norms = g.column_sq_norms();
        let a = g.a_alpha;
        g.b_alpha = norms.map(|n| a * n / q as f64);
        groups.push(g);
    }
    let gp = GpParams::new(p, data.m(), 2.0 * data.delta, 0.5 * data.t as f64 * data.delta);
    Ok(Model {
        groups: data.groups.clone(),
        delta: data.delta,
        hyper: *hyper,
        gp,
        reg: RegressionPosterior { a_phi, groups },
    })
}

/// Which normalization [`shared_variance_fraction`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMeasure {
    /// `⟨‖c_j^m‖²⟩`.
    LoadingNorm,
    /// `⟨α_j^m⟩⁻¹`.
    InverseArd,
}

/// Fraction of each group's shared variance carried by each latent,
/// `ν[m][j]`. A group whose loadings are all zero gets a uniform split.
pub fn shared_variance_fraction(reg: &RegressionPosterior, measure: VarianceMeasure) -> Vec<Vec<f64>> {
    reg.groups
        .iter()
        .map(|g| {
            let w: Vec<f64> = match measure {
                VarianceMeasure::LoadingNorm => g.column_sq_norms().iter().copied().collect(),
                VarianceMeasure::InverseArd => g.alpha_mean().iter().map(|a| 1.0 / a).collect(),
            };
            let total: f64 = w.iter().sum();
            if total > 0.0 && total.is_finite() {
                w.iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / w.len() as f64; w.len()]
            }
        })
        .collect()
}

/// Which latents pass the ν threshold in each group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    /// `significant[m][j]` is true when `ν[m][j] ≥ threshold`.
    pub significant: Vec<Vec<bool>>,
    /// Latents significant in at least one group.
    pub latents: Vec<usize>,
    /// `latents.len()`.
    pub count: usize,
}

/// Applies the ν threshold (inclusive).
pub fn significant_latents(nu: &[Vec<f64>], threshold: f64) -> SignificanceReport {
    let significant: Vec<Vec<bool>> = nu.iter().map(|g| g.iter().map(|v| *v >= threshold).collect()).collect();
    let p = nu.first().map_or(0, Vec::len);
    let latents: Vec<usize> = (0..p).filter(|&j| significant.iter().any(|g| g[j])).collect();
    SignificanceReport { count: latents.len(), significant, latents }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_dataset() -> Dataset {
        let trials = (0..4)
            .map(|n| DMatrix::from_fn(3, 6, |r, t| ((n * 7 + r * 3 + t * 5) % 11) as f64 - 4.0 + r as f64))
            .collect();
        Dataset::new(6, 20.0, vec![2, 1], trials).unwrap()
    }

    #[test]
    fn initialization_matches_data_scale() {
        let ds = toy_dataset();
        let model = initialize(&ds, 3, 7, &Hyperparams::default()).unwrap();
        let (mean, var) = ds.unit_moments();
        assert_relative_eq!(model.reg.groups[0].mu_d[1], mean[1], epsilon = 1e-12);
        assert_relative_eq!(1.0 / model.reg.phi_mean(1)[0], var[2], max_relative = 1e-12);
        assert_eq!(model.gp.tau, vec![40.0; 3]);
        assert!(model.gp.delays.iter().all(|d| d.iter().all(|v| *v == 0.0)));
        let g = &model.reg.groups[0];
        let alpha = g.alpha_mean();
        let norms = g.column_sq_norms();
        for j in 0..3 {
            assert_relative_eq!(alpha[j], 2.0 / norms[j], max_relative = 1e-12);
        }
        assert_eq!(model, initialize(&ds, 3, 7, &Hyperparams::default()).unwrap());
    }

    #[test]
    fn zero_variance_unit_is_rejected() {
        let ds = Dataset::new(5, 20.0, vec![2], vec![DMatrix::zeros(2, 5); 3]).unwrap();
        assert_eq!(ds.unit_moments().0, vec![0.0, 0.0]);
        assert!(matches!(
            initialize(&ds, 2, 0, &Hyperparams::default()),
            Err(MdlagError::DegenerateVariance { unit: 0 })
        ));
    }

    #[test]
    fn gamma_kl_vanishes_at_prior() {
        assert_eq!(kl_gamma(2.5, 0.7, 2.5, 0.7), 0.0);
        assert!(kl_gamma(3.0, 0.7, 2.5, 0.7) > 0.0);
    }

    #[test]
    fn regression_kl_vanishes_at_prior() {
        let hyper = Hyperparams { beta: 2.0, a_phi: 1.5, b_phi: 0.5, a_alpha: 2.0, b_alpha: 3.0 };
        let p = 2;
        let g = GroupPosterior {
            mu_d: DVector::zeros(2),
            sigma_d: DVector::from_element(2, 0.5),
            b_phi: DVector::from_element(2, 0.5),
            mu_c: DMatrix::zeros(2, p),
            sigma_c: vec![DMatrix::identity(p, p); 2],
            a_alpha: 2.0,
            b_alpha: DVector::from_element(p, 3.0),
        };
        let reg = RegressionPosterior { a_phi: 1.5, groups: vec![g] };
        assert_eq!(neg_kl_ard(&reg, &hyper), 0.0);
        assert_eq!(neg_kl_noise(&reg, &hyper), 0.0);
        assert_relative_eq!(neg_kl_mean(&reg, &hyper), 0.0, epsilon = 1e-15);
        assert!(neg_kl_loadings(&reg).is_finite());
    }

    #[test]
    fn variance_fractions() {
        let mut g = GroupPosterior {
            mu_d: DVector::zeros(1),
            sigma_d: DVector::from_element(1, 1.0),
            b_phi: DVector::from_element(1, 1.0),
            mu_c: DMatrix::from_row_slice(1, 2, &[3f64.sqrt(), 1.0]),
            sigma_c: vec![DMatrix::zeros(2, 2)],
            a_alpha: 1.0,
            b_alpha: DVector::from_element(2, 1.0),
        };
        let reg = RegressionPosterior { a_phi: 1.0, groups: vec![g.clone()] };
        let nu = shared_variance_fraction(&reg, VarianceMeasure::LoadingNorm);
        assert_relative_eq!(nu[0][0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(nu[0][1], 0.25, epsilon = 1e-12);
        g.mu_c = DMatrix::zeros(1, 2);
        let reg = RegressionPosterior { a_phi: 1.0, groups: vec![g] };
        assert_eq!(shared_variance_fraction(&reg, VarianceMeasure::LoadingNorm)[0], vec![0.5, 0.5]);
    }

    #[test]
    fn significance_threshold_is_inclusive() {
        let rep = significant_latents(&[vec![0.02, 0.0199, 0.9601]], 0.02);
        assert_eq!(rep.significant[0], vec![true, false, true]);
        assert_eq!(rep.count, 2);
        let rep = significant_latents(&[vec![0.01, 0.97, 0.02 - 1e-9]], 0.02);
        assert_eq!(rep.count, 1);
    }

    #[test]
    fn unconstrained_roundtrip() {
        let mut gp = GpParams::new(2, 3, 40.0, 1000.0);
        gp.delays[0][1] = 12.0;
        gp.delays[1][2] = -230.0;
        gp.tau[1] = 75.0;
        let theta = gp.to_unconstrained();
        let mut back = GpParams::new(2, 3, 1.0, 1000.0);
        back.set_unconstrained(&theta);
        for j in 0..2 {
            assert_relative_eq!(back.tau[j], gp.tau[j], max_relative = 1e-12);
            for m in 0..3 {
                assert_relative_eq!(back.delays[j][m], gp.delays[j][m], epsilon = 1e-9);
            }
        }
    }
}
