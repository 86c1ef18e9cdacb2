//! Frequency-domain inference.
//!
//! Each trial is moved to the frequency domain with the unitary DFT, where
//! the latents decouple across frequency bins. Real-valued data have a
//! conjugate-symmetric spectrum, so only the bins `0..=⌊T/2⌋` are kept and
//! every sum over all bins is folded onto them with the weights of
//! [`FrequencyGrid::fold_weight`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{Engine, FitConfig, FitReport, GpObjective, GpOptimizer, GpStep, LatentPosterior, Method};
use crate::data::Dataset;
use crate::error::Result;
use crate::kernels::{discrete_psd, discrete_psd_dgamma, phase_factor};
use crate::numerics::{frequency_grid, hermitize, hpd_inverse_logdet_jitter, FrequencyGrid, UnitaryDft};
use crate::state::{
    data_stats, expected_loglik, neg_kl_regression, update_regression, GpParams, Model, SuffStats,
};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Periodic Hamming window `0.54 − 0.46 cos(2π t / T)`, `t = 0 … T−1`.
pub fn hamming_periodic(t: usize) -> Vec<f64> {
    (0..t)
        .map(|s| 0.54 - 0.46 * (2.0 * PI * s as f64 / t as f64).cos())
        .collect()
}

/// Tapers every trial: each unit is standardized over all trials and
/// samples, multiplied by the periodic Hamming window, and rescaled so that
/// its mean and standard deviation match the original ones. Units with
/// zero variance are left unchanged.
pub fn taper_preprocess(data: &Dataset) -> Result<Dataset> {
    data.validate()?;
    let window = hamming_periodic(data.t);
    let (mean, var) = data.unit_moments();
    let mut out = data.clone();
    for y in out.trials.iter_mut() {
        for r in 0..y.nrows() {
            let sd = var[r].sqrt();
            if sd > 0.0 {
                for s in 0..data.t {
                    y[(r, s)] = (y[(r, s)] - mean[r]) / sd * window[s];
                }
            }
        }
    }
    let (tmean, tvar) = out.unit_moments();
    for y in out.trials.iter_mut() {
        for r in 0..y.nrows() {
            let sd = var[r].sqrt();
            if sd > 0.0 && tvar[r] > 0.0 {
                let scale = sd / tvar[r].sqrt();
                for s in 0..data.t {
                    y[(r, s)] = mean[r] + (y[(r, s)] - tmean[r]) * scale;
                }
            }
        }
    }
    Ok(out)
}

/// Half spectra of every trial of a dataset.
#[derive(Debug, Clone)]
pub struct SpectralDataset {
    /// Frequency grid of the full transform.
    pub grid: FrequencyGrid,
    /// Fold weight of each kept bin.
    pub weights: Vec<f64>,
    /// One `q × (⌊T/2⌋+1)` matrix per trial.
    pub spectra: Vec<DMatrix<Complex64>>,
    /// Time-domain data the spectra were computed from (tapered if
    /// requested).
    pub processed: Dataset,
    /// Whether the taper was applied.
    pub tapered: bool,
}

impl SpectralDataset {
    /// Transforms `data`, optionally after [`taper_preprocess`].
    pub fn new(data: &Dataset, taper: bool) -> Result<Self> {
        let processed = if taper { taper_preprocess(data)? } else { data.clone() };
        let grid = frequency_grid(data.t, data.delta)?;
        let h = grid.half_len();
        let weights = (0..h).map(|l| grid.fold_weight(l)).collect();
        let dft = UnitaryDft::new(data.t)?;
        let mut spectra = Vec::with_capacity(processed.n());
        for y in &processed.trials {
            let mut spec = DMatrix::from_element(y.nrows(), h, ZERO);
            for r in 0..y.nrows() {
                let row: Vec<f64> = y.row(r).iter().copied().collect();
                let z = dft.forward_real(&row)?;
                for l in 0..h {
                    spec[(r, l)] = z[l];
                }
            }
            spectra.push(spec);
        }
        Ok(Self { grid, weights, spectra, processed, tapered: taper })
    }

    /// Number of kept bins.
    pub fn half_len(&self) -> usize {
        self.weights.len()
    }

    /// Number of trials.
    pub fn n(&self) -> usize {
        self.spectra.len()
    }
}

/// Per-bin posteriors over the latent spectra.
#[derive(Debug, Clone)]
pub struct FrequencyPosterior {
    /// Frequency grid.
    pub grid: FrequencyGrid,
    /// Latents.
    pub p: usize,
    /// Groups.
    pub m: usize,
    /// Samples per trial.
    pub t: usize,
    /// Posterior mean of each trial (`p × (⌊T/2⌋+1)`).
    pub mu: Vec<DMatrix<Complex64>>,
    /// Posterior covariance at each kept bin, shared by all trials.
    pub sigma: Vec<DMatrix<Complex64>>,
    /// `ln |Σ̃_l|` at each kept bin.
    pub logdet: Vec<f64>,
    /// Delays `delays[j][m]` the posterior was computed with.
    pub delays: Vec<Vec<f64>>,
}

impl FrequencyPosterior {
    /// Phase factors of group `g` at kept bin `l`.
    fn phases(&self, g: usize, l: usize) -> Vec<Complex64> {
        phases_for(&self.delays, g, self.grid.f[l])
    }

    /// `E_l = N Σ̃_l + Σ_n μ̃_{n,l} μ̃_{n,l}ᴴ`.
    pub fn second_moment(&self, l: usize) -> DMatrix<Complex64> {
        let n = self.mu.len() as f64;
        let mut e = self.sigma[l].map(|z| z * n);
        for mu in &self.mu {
            let col = mu.column(l);
            e += col * col.adjoint();
        }
        e
    }

    /// Time-domain posterior mean of the latents seen by group `g` in trial
    /// `n` (`p × T`).
    pub fn group_means(&self, n: usize, g: usize) -> Result<DMatrix<f64>> {
        let dft = UnitaryDft::new(self.t)?;
        let h = self.grid.half_len();
        let mut out = DMatrix::zeros(self.p, self.t);
        let phases: Vec<Vec<Complex64>> = (0..h).map(|l| self.phases(g, l)).collect();
        for j in 0..self.p {
            let mut full = vec![ZERO; self.t];
            for l in 0..h {
                let z = phases[l][j] * self.mu[n][(j, l)];
                full[l] = z;
                let k = self.grid.mirror(l);
                if k != l {
                    full[k] = z.conj();
                }
            }
            let x = dft.inverse(&full)?;
            for s in 0..self.t {
                out[(j, s)] = x[s].re;
            }
        }
        Ok(out)
    }
}

fn phases_for(delays: &[Vec<f64>], g: usize, f: f64) -> Vec<Complex64> {
    delays.iter().map(|d| phase_factor(f, d[g])).collect()
}

fn to_complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|v| Complex64::new(v, 0.0))
}

/// `v = ⟨C⟩ᵀ⟨Φ⟩(ỹ − d̃)` of trial `n`, group `g` (`p × (⌊T/2⌋+1)`), where
/// `d̃` is `√T ⟨d⟩` at the zero bin and zero elsewhere.
fn projected(model: &Model, spec: &SpectralDataset, n: usize, g: usize) -> DMatrix<Complex64> {
    let rows = spec.processed.group_rows(g);
    let mut centered = spec.spectra[n].rows(rows.start, rows.len()).into_owned();
    let root_t = (spec.grid.t as f64).sqrt();
    for (r, d) in model.reg.groups[g].mu_d.iter().enumerate() {
        centered[(r, 0)] -= Complex64::new(root_t * d, 0.0);
    }
    to_complex(&model.reg.ct_phi(g)) * centered
}

/// Per-bin posteriors given the groups listed in `use_groups`.
pub(crate) fn update_qx_freq_groups(model: &Model, spec: &SpectralDataset, use_groups: &[usize]) -> Result<FrequencyPosterior> {
    let (p, m) = (model.p(), model.m());
    let h = spec.half_len();
    let psi: Vec<DMatrix<Complex64>> = (0..m).map(|g| to_complex(&model.reg.ctphic(g))).collect();
    let proj: Vec<Vec<DMatrix<Complex64>>> = (0..spec.n())
        .map(|n| use_groups.iter().map(|&g| projected(model, spec, n, g)).collect())
        .collect();
    let mut mu = vec![DMatrix::from_element(p, h, ZERO); spec.n()];
    let mut sigma = Vec::with_capacity(h);
    let mut logdet = Vec::with_capacity(h);
    for l in 0..h {
        let f = spec.grid.f[l];
        let mut prec = DMatrix::from_element(p, p, ZERO);
        for j in 0..p {
            let s = discrete_psd(f, model.gp.tau[j], model.gp.sigma2[j], spec.grid.delta);
            prec[(j, j)] = Complex64::new(1.0 / s, 0.0);
        }
        let phases: Vec<Vec<Complex64>> = use_groups.iter().map(|&g| phases_for(&model.gp.delays, g, f)).collect();
        for (gi, &g) in use_groups.iter().enumerate() {
            let hv = &phases[gi];
            for j in 0..p {
                for k in 0..p {
                    prec[(j, k)] += hv[j].conj() * psi[g][(j, k)] * hv[k];
                }
            }
        }
        hermitize(&mut prec);
        let (mut sig, ld_prec) = hpd_inverse_logdet_jitter(&prec)?;
        hermitize(&mut sig);
        for (n, mu_n) in mu.iter_mut().enumerate() {
            let mut rhs = DVector::from_element(p, ZERO);
            for (gi, hv) in phases.iter().enumerate() {
                for j in 0..p {
                    rhs[j] += hv[j].conj() * proj[n][gi][(j, l)];
                }
            }
            mu_n.set_column(l, &(&sig * rhs));
        }
        sigma.push(sig);
        logdet.push(-ld_prec);
    }
    Ok(FrequencyPosterior {
        grid: spec.grid.clone(),
        p,
        m,
        t: spec.grid.t,
        mu,
        sigma,
        logdet,
        delays: model.gp.delays.clone(),
    })
}

/// Per-bin posteriors given every group.
pub fn update_qx_freq(model: &Model, spec: &SpectralDataset) -> Result<FrequencyPosterior> {
    model.check_dataset(&spec.processed)?;
    let all: Vec<usize> = (0..model.m()).collect();
    update_qx_freq_groups(model, spec, &all)
}

/// Latent statistics feeding the regression updates, folded from the
/// frequency domain.
pub fn frequency_stats(post: &FrequencyPosterior, spec: &SpectralDataset) -> Vec<SuffStats> {
    let (p, t) = (post.p, post.t);
    let n = spec.n();
    let h = spec.half_len();
    let root_t = (t as f64).sqrt();
    let e: Vec<DMatrix<Complex64>> = (0..h).map(|l| post.second_moment(l)).collect();
    (0..post.m)
        .map(|g| {
            let rows = spec.processed.group_rows(g);
            let (sy, syy) = data_stats(&spec.processed, g);
            let mut s = SuffStats::zeros(p, sy, syy, (n * t) as f64);
            for l in 0..h {
                let w = spec.weights[l];
                let hv = post.phases(g, l);
                for j in 0..p {
                    for k in 0..p {
                        s.sxx[(j, k)] += w * (hv[j] * e[l][(j, k)] * hv[k].conj()).re;
                    }
                }
                for k in 0..n {
                    let ys = spec.spectra[k].rows(rows.start, rows.len());
                    for j in 0..p {
                        let x = hv[j] * post.mu[k][(j, l)];
                        for r in 0..rows.len() {
                            s.sxy[(j, r)] += w * (x * ys[(r, l)].conj()).re;
                        }
                    }
                }
            }
            for k in 0..n {
                for j in 0..p {
                    s.sx[j] += root_t * post.mu[k][(j, 0)].re;
                }
            }
            s
        })
        .collect()
}

/// Regression-factor updates from frequency-domain latent moments.
pub fn update_regression_factors_freq(model: &mut Model, spec: &SpectralDataset, post: &FrequencyPosterior) -> Result<()> {
    let stats = frequency_stats(post, spec);
    update_regression(&mut model.reg, &model.hyper, &stats)
}

/// GP-dependent part of the folded bound with the latent posteriors and
/// regression factors held fixed.
pub struct FreqGpObjective {
    n: f64,
    m: usize,
    grid: FrequencyGrid,
    weights: Vec<f64>,
    psi: Vec<DMatrix<f64>>,
    /// `E_l` per kept bin.
    e: Vec<DMatrix<Complex64>>,
    /// `r[l][g][j] = Σ_n μ̃_{n,j,l} conj(v_{n,g,j,l})`.
    r: Vec<Vec<Vec<Complex64>>>,
}

impl FreqGpObjective {
    /// Snapshot of the moments of `post` and the regression factors of `model`.
    pub fn new(model: &Model, spec: &SpectralDataset, post: &FrequencyPosterior) -> Self {
        let (p, m) = (post.p, post.m);
        let h = spec.half_len();
        let mut r = vec![vec![vec![ZERO; p]; m]; h];
        for n in 0..spec.n() {
            for g in 0..m {
                let v = projected(model, spec, n, g);
                for (l, rl) in r.iter_mut().enumerate() {
                    for j in 0..p {
                        rl[g][j] += post.mu[n][(j, l)] * v[(j, l)].conj();
                    }
                }
            }
        }
        Self {
            n: spec.n() as f64,
            m,
            grid: spec.grid.clone(),
            weights: spec.weights.clone(),
            psi: (0..m).map(|g| model.reg.ctphic(g)).collect(),
            e: (0..h).map(|l| post.second_moment(l)).collect(),
            r,
        }
    }

    /// Value plus, when requested, the timescale and delay gradients.
    fn evaluate(&self, gp: &GpParams, want_grad: bool) -> (f64, Vec<f64>) {
        let (p, m) = (gp.p(), self.m);
        let delta = self.grid.delta;
        let mut value = 0.0;
        let mut dgamma = vec![0.0; p];
        let mut ddelay = vec![vec![0.0; m]; p];
        for (l, &w) in self.weights.iter().enumerate() {
            let f = self.grid.f[l];
            let e = &self.e[l];
            for j in 0..p {
                let s = discrete_psd(f, gp.tau[j], gp.sigma2[j], delta);
                let ejj = e[(j, j)].re;
                value += w * (-0.5 * self.n * s.ln() - 0.5 * ejj / s);
                if want_grad {
                    let gamma = 1.0 / gp.tau[j].powi(2);
                    let ds = discrete_psd_dgamma(f, gamma, gp.sigma2[j], delta);
                    dgamma[j] += w * ds * (-0.5 * self.n / s + 0.5 * ejj / (s * s));
                }
            }
            for g in 0..m {
                let hv = phases_for(&gp.delays, g, f);
                let psi = &self.psi[g];
                let rg = &self.r[l][g];
                for j in 0..p {
                    let mut quad = ZERO;
                    for k in 0..p {
                        quad += e[(j, k)] * hv[k].conj() * psi[(k, j)];
                    }
                    value += w * ((hv[j] * rg[j]).re - 0.5 * (hv[j] * quad).re);
                    if want_grad {
                        let z = Complex64::new(0.0, 2.0 * PI * f) * hv[j] * (quad - rg[j]);
                        ddelay[j][g] += w * z.re;
                    }
                }
            }
        }
        let mut grad = Vec::new();
        if want_grad {
            grad.reserve(p * m);
            for j in 0..p {
                grad.push(dgamma[j] / gp.tau[j].powi(2));
                grad.extend(ddelay[j].iter().skip(1));
            }
        }
        (value, grad)
    }
}

impl GpObjective for FreqGpObjective {
    fn value(&self, gp: &GpParams) -> Result<f64> {
        Ok(self.evaluate(gp, false).0)
    }

    fn value_grad(&self, gp: &GpParams) -> Result<(f64, Vec<f64>)> {
        Ok(self.evaluate(gp, true))
    }
}

/// Gradient of the folded bound with respect to `ln γ_j` of every latent.
pub fn grad_timescale_freq(model: &Model, spec: &SpectralDataset, post: &FrequencyPosterior) -> Vec<f64> {
    let m = model.m();
    let (_, g) = FreqGpObjective::new(model, spec, post).evaluate(&model.gp, true);
    g.iter().step_by(m).copied().collect()
}

/// Gradient of the folded bound with respect to `D_j^m`, `m = 2 … M`, as
/// `out[j][m-2]`.
pub fn grad_delay_freq(model: &Model, spec: &SpectralDataset, post: &FrequencyPosterior) -> Vec<Vec<f64>> {
    let m = model.m();
    let (_, g) = FreqGpObjective::new(model, spec, post).evaluate(&model.gp, true);
    g.chunks(m).map(|c| c[1..].to_vec()).collect()
}

/// One backtracking gradient update of the GP parameters.
pub fn update_gp_freq(
    model: &mut Model,
    spec: &SpectralDataset,
    post: &FrequencyPosterior,
    optimizer: &mut GpOptimizer,
    steps: usize,
) -> Result<GpStep> {
    let obj = FreqGpObjective::new(model, spec, post);
    optimizer.run(&obj, &mut model.gp, model.delta, steps)
}

/// Folded lower bound under the frequency-domain posterior.
pub fn elbo_freq(model: &Model, spec: &SpectralDataset, post: &FrequencyPosterior) -> Result<f64> {
    elbo_freq_with(model, spec, post, &frequency_stats(post, spec))
}

fn elbo_freq_with(model: &Model, spec: &SpectralDataset, post: &FrequencyPosterior, stats: &[SuffStats]) -> Result<f64> {
    let n = spec.n() as f64;
    let p = post.p;
    let mut neg_kl = 0.0;
    for (l, &w) in spec.weights.iter().enumerate() {
        let f = spec.grid.f[l];
        let e = post.second_moment(l);
        let mut v = n * p as f64 + n * post.logdet[l];
        for j in 0..p {
            let s = discrete_psd(f, model.gp.tau[j], model.gp.sigma2[j], spec.grid.delta);
            v -= n * s.ln() + e[(j, j)].re / s;
        }
        neg_kl += 0.5 * w * v;
    }
    Ok(expected_loglik(&model.reg, stats) + neg_kl_regression(&model.reg, &model.hyper) + neg_kl)
}

/// Fits with the frequency-domain method.
pub fn fit_frequency(data: &Dataset, config: &FitConfig) -> Result<FitReport> {
    let config = FitConfig { method: Method::Frequency, ..config.clone() };
    super::fit(data, &config)
}

pub(crate) struct FrequencyEngine {
    spec: SpectralDataset,
    post: Option<FrequencyPosterior>,
    stats: Vec<SuffStats>,
}

impl FrequencyEngine {
    pub(crate) fn new(data: &Dataset, taper: bool) -> Result<Self> {
        Ok(Self { spec: SpectralDataset::new(data, taper)?, post: None, stats: Vec::new() })
    }

    fn post(&self) -> &FrequencyPosterior {
        self.post.as_ref().expect("latents inferred before use")
    }
}

impl Engine for FrequencyEngine {
    fn update_latents(&mut self, model: &Model) -> Result<()> {
        let post = update_qx_freq(model, &self.spec)?;
        self.stats = frequency_stats(&post, &self.spec);
        self.post = Some(post);
        Ok(())
    }

    fn stats(&self, _model: &Model) -> Result<Vec<SuffStats>> {
        Ok(self.stats.clone())
    }

    fn gp_objective(&self, model: &Model) -> Result<Box<dyn GpObjective + '_>> {
        Ok(Box::new(FreqGpObjective::new(model, &self.spec, self.post())))
    }

    fn elbo(&self, model: &Model) -> Result<f64> {
        elbo_freq_with(model, &self.spec, self.post(), &self.stats)
    }

    fn latents(&self) -> LatentPosterior {
        LatentPosterior::Frequency(self.post().clone())
    }
}
