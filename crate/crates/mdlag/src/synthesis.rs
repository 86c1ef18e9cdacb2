//! Ground-truth model construction and synthetic data generation.
//!
//! Data can be drawn from the exact time-domain model (dense Gaussian
//! sampling, small scale) or through the frequency domain on a grid three
//! times longer than requested, keeping the middle third (any scale).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MdlagError, Result};
use crate::kernels::{build_K, discrete_psd, phase_factor, DEFAULT_SIGMA2};
use crate::numerics::{frequency_grid, spd_cholesky_jitter, UnitaryDft};
use crate::state::{GpParams, GroupPosterior, Hyperparams, Model, RegressionPosterior};

/// Largest `p·M·T` accepted by [`generate_time`].
pub const TIME_GENERATION_GUARD: usize = 5000;

/// Shape parameter used to express known noise precisions as a Gamma
/// posterior in a ground-truth model.
const POINT_MASS_SHAPE: f64 = 1e12;

/// How loading matrices are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LoadingDesign {
    /// Every entry standard normal.
    Dense,
    /// `pattern[m][j]` says whether latent `j` loads onto group `m`; other
    /// columns are zero.
    BlockSparse(Vec<Vec<bool>>),
}

/// Everything needed to draw a ground-truth model and data from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Preset name, or `custom`.
    pub name: String,
    /// Trials.
    pub n: usize,
    /// Samples per trial.
    pub t: usize,
    /// Sampling period (ms).
    pub delta: f64,
    /// Units per group.
    pub groups: Vec<usize>,
    /// Timescale of each latent (ms).
    pub tau: Vec<f64>,
    /// `delays[j][m]` (ms); `delays[j][0] = 0`.
    pub delays: Vec<Vec<f64>>,
    /// Target signal-to-noise ratio `tr(CCᵀ)/tr(Φ⁻¹)` of each group.
    pub snr: Vec<f64>,
    /// Loading design.
    pub design: LoadingDesign,
    /// White-noise variance of every latent GP.
    pub sigma2: f64,
    /// Seed of all random draws.
    pub seed: u64,
}

impl ScenarioConfig {
    /// Number of latents.
    pub fn p(&self) -> usize {
        self.tau.len()
    }

    /// Number of groups.
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    /// Checks dimensions and value ranges.
    pub fn validate(&self) -> Result<()> {
        let (p, m) = (self.p(), self.m());
        if self.n == 0 || self.t == 0 || p == 0 || m == 0 || self.groups.contains(&0) {
            return Err(MdlagError::Config("scenario needs N, T, p, M and every q_m positive".into()));
        }
        if !positive(self.delta) || !self.tau.iter().all(|&v| positive(v)) {
            return Err(MdlagError::Config("sampling period and timescales must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sigma2) {
            return Err(MdlagError::Config("GP noise variance must lie in [0, 1)".into()));
        }
        if self.snr.len() != m || self.snr.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(MdlagError::Config("one positive SNR per group required".into()));
        }
        if self.delays.len() != p || self.delays.iter().any(|d| d.len() != m || d[0] != 0.0) {
            return Err(MdlagError::Config("delay table must be p × M with a zero first column".into()));
        }
        if let LoadingDesign::BlockSparse(pattern) = &self.design {
            if pattern.len() != m || pattern.iter().any(|r| r.len() != p) {
                return Err(MdlagError::Config("block-sparse pattern must be M × p".into()));
            }
            if pattern.iter().any(|r| !r.iter().any(|&b| b)) {
                return Err(MdlagError::Config("every group needs at least one loaded latent".into()));
            }
        }
        Ok(())
    }

    /// Bound on delay magnitudes used by fitted models of this scenario.
    pub fn d_max(&self) -> f64 {
        0.5 * self.t as f64 * self.delta
    }
}

/// True for positive numbers, false for NaN.
fn positive(v: f64) -> bool {
    v > 0.0
}

/// Named presets.
///
/// * `demo`: two groups of 10 units, four latents (one shared with group B
///   lagging by 12 ms, one shared with group A lagging by 23 ms, one local
///   latent per group), timescales {50, 80, 20, 120} ms, SNR 0.2, N = 100,
///   T = 100, δ = 20 ms.
/// * `scaling_T`: two groups of 12 units, one latent, τ = 100 ms,
///   D = 10 ms, SNR 0.2, N = 100, T = 50.
/// * `scaling_M`: 24 units split evenly over 2 groups (change `groups` to
///   scale M), one latent, τ = 100 ms, delays drawn uniform on [0, 20] ms.
/// * `model_selection`: one group of 24 units, four latents with
///   τ = 50 ms, SNR 0.1, N = 100, T = 200.
pub fn make_scenario(name: &str) -> Result<ScenarioConfig> {
    let base = |name: &str| ScenarioConfig {
        name: name.to_string(),
        n: 100,
        t: 50,
        delta: 20.0,
        groups: vec![12, 12],
        tau: vec![100.0],
        delays: vec![vec![0.0, 10.0]],
        snr: vec![0.2, 0.2],
        design: LoadingDesign::Dense,
        sigma2: DEFAULT_SIGMA2,
        seed: 0,
    };
    match name {
        "demo" => Ok(ScenarioConfig {
            t: 100,
            groups: vec![10, 10],
            tau: vec![50.0, 80.0, 20.0, 120.0],
            delays: vec![vec![0.0, 12.0], vec![0.0, -23.0], vec![0.0, 0.0], vec![0.0, 0.0]],
            design: LoadingDesign::BlockSparse(vec![
                vec![true, true, true, false],
                vec![true, true, false, true],
            ]),
            ..base(name)
        }),
        "scaling_T" => Ok(base(name)),
        "scaling_M" => Ok(base(name).with_uniform_delays(20.0)),
        "model_selection" => Ok(ScenarioConfig {
            t: 200,
            groups: vec![24],
            tau: vec![50.0; 4],
            delays: vec![vec![0.0]; 4],
            snr: vec![0.1],
            ..base(name)
        }),
        other => Err(MdlagError::Config(format!(
            "unknown scenario {other:?}; expected demo, scaling_T, scaling_M or model_selection"
        ))),
    }
}

impl ScenarioConfig {
    /// Splits `total` units evenly over `m` groups (the first groups take
    /// the remainder) and redraws delays uniform on `[0, max_delay]`,
    /// keeping the SNR of the first group for all of them.
    pub fn with_groups(mut self, m: usize, total: usize, max_delay: f64) -> Self {
        let m = m.max(1);
        self.groups = (0..m).map(|g| total / m + usize::from(g < total % m)).collect();
        let snr = self.snr.first().copied().unwrap_or(0.2);
        self.snr = vec![snr; m];
        self.delays = vec![vec![0.0; m]; self.p()];
        self.with_uniform_delays(max_delay)
    }

    /// Redraws delays of groups `2 … M` uniform on `[0, max_delay]` from the
    /// scenario seed.
    pub fn with_uniform_delays(mut self, max_delay: f64) -> Self {
        let mut rng = substream(self.seed, u64::MAX);
        let m = self.m();
        for d in self.delays.iter_mut() {
            d.resize(m, 0.0);
            d[0] = 0.0;
            for v in d.iter_mut().skip(1) {
                *v = rng.random_range(0.0..=max_delay);
            }
        }
        self
    }

    /// Sets the SNR of every group.
    pub fn with_snr(mut self, snr: f64) -> Self {
        self.snr = vec![snr; self.m()];
        self
    }
}

/// True parameters a dataset was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Loadings of each group (`q_m × p`).
    pub c: Vec<DMatrix<f64>>,
    /// Means of each group.
    pub d: Vec<DVector<f64>>,
    /// Noise precisions of each group.
    pub phi: Vec<DVector<f64>>,
    /// GP parameters.
    pub gp: GpParams,
    /// Sampling period (ms).
    pub delta: f64,
}

impl GroundTruth {
    /// Realized `tr(CCᵀ)/tr(Φ⁻¹)` of each group.
    pub fn snr(&self) -> Vec<f64> {
        self.c
            .iter()
            .zip(&self.phi)
            .map(|(c, phi)| c.norm_squared() / phi.iter().map(|v| 1.0 / v).sum::<f64>())
            .collect()
    }

    /// The ground truth as a model with (numerically) point-mass posteriors.
    pub fn to_model(&self, hyper: Hyperparams) -> Model {
        let groups = self
            .c
            .iter()
            .zip(&self.d)
            .zip(&self.phi)
            .map(|((c, d), phi)| {
                let (q, p) = c.shape();
                let norms = DVector::from_fn(p, |j, _| c.column(j).norm_squared().max(1e-12));
                GroupPosterior {
                    mu_d: d.clone(),
                    sigma_d: DVector::zeros(q),
                    b_phi: phi.map(|v| POINT_MASS_SHAPE / v),
                    mu_c: c.clone(),
                    sigma_c: vec![DMatrix::zeros(p, p); q],
                    a_alpha: q as f64 / 2.0,
                    b_alpha: norms / 2.0,
                }
            })
            .collect();
        Model {
            groups: self.c.iter().map(|c| c.nrows()).collect(),
            delta: self.delta,
            hyper,
            gp: self.gp.clone(),
            reg: RegressionPosterior { a_phi: POINT_MASS_SHAPE, groups },
        }
    }
}

/// Independent random stream for `(seed, index)`.
fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws loadings, means and noise precisions. Noise precisions start
/// uniform on `[0.5, 1.5]` and are rescaled so each group hits its SNR.
pub fn draw_ground_truth(config: &ScenarioConfig) -> Result<GroundTruth> {
    config.validate()?;
    let mut rng = substream(config.seed, 0);
    let p = config.p();
    let mut c = Vec::with_capacity(config.m());
    let mut d = Vec::with_capacity(config.m());
    let mut phi = Vec::with_capacity(config.m());
    for (g, &q) in config.groups.iter().enumerate() {
        let mut cg = DMatrix::from_fn(q, p, |_, _| normal(&mut rng));
        if let LoadingDesign::BlockSparse(pattern) = &config.design {
            for j in 0..p {
                if !pattern[g][j] {
                    cg.column_mut(j).fill(0.0);
                }
            }
        }
        let dg = DVector::from_fn(q, |_, _| normal(&mut rng));
        let raw = DVector::from_fn(q, |_, _| rng.random_range(0.5..=1.5));
        let noise_var: f64 = raw.iter().map(|v| 1.0 / v).sum();
        let scale = noise_var * config.snr[g] / cg.norm_squared();
        c.push(cg);
        d.push(dg);
        phi.push(raw * scale);
    }
    let gp = GpParams {
        tau: config.tau.clone(),
        sigma2: vec![config.sigma2; p],
        delays: config.delays.clone(),
        d_max: config.d_max(),
    };
    Ok(GroundTruth { c, d, phi, gp, delta: config.delta })
}

/// `y = C x + d + ε` for one trial given the latents seen by each group
/// (`x[m]` is `p × T`).
fn observe(truth: &GroundTruth, x: &[DMatrix<f64>], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q: usize = truth.c.iter().map(|c| c.nrows()).sum();
    let t = x[0].ncols();
    let mut y = DMatrix::zeros(q, t);
    let mut row = 0;
    for (g, xg) in x.iter().enumerate() {
        let mean = &truth.c[g] * xg;
        for r in 0..truth.c[g].nrows() {
            let sd = 1.0 / truth.phi[g][r].sqrt();
            for s in 0..t {
                y[(row + r, s)] = mean[(r, s)] + truth.d[g][r] + sd * normal(rng);
            }
        }
        row += truth.c[g].nrows();
    }
    y
}

fn finish(config: &ScenarioConfig, trials: Vec<DMatrix<f64>>, route: &str) -> Result<Dataset> {
    let mut ds = Dataset::new(config.t, config.delta, config.groups.clone(), trials)?;
    ds.seed = Some(config.seed);
    ds.provenance = Some(format!("synthetic:{}:{route}", config.name));
    Ok(ds)
}

/// Samples data from the exact time-domain model. Refuses `p·M·T` above
/// [`TIME_GENERATION_GUARD`]; use [`generate_freq`] for larger instances.
pub fn generate_time(config: &ScenarioConfig) -> Result<(Dataset, GroundTruth)> {
    let truth = draw_ground_truth(config)?;
    let (p, m, t) = (config.p(), config.m(), config.t);
    if p * m * t > TIME_GENERATION_GUARD {
        return Err(MdlagError::ResourceGuard(format!(
            "dense time-domain sampling with p·M·T = {} exceeds {TIME_GENERATION_GUARD}; use generate_freq",
            p * m * t
        )));
    }
    let factors = (0..p)
        .map(|j| spd_cholesky_jitter(&build_K(&truth.gp.kernel(j), m, t, config.delta)).map(|c| c.l()))
        .collect::<Result<Vec<_>>>()?;
    let trials = (0..config.n)
        .into_par_iter()
        .map(|n| {
            let mut rng = substream(config.seed, n as u64 + 1);
            let mut x = vec![DMatrix::zeros(p, t); m];
            for (j, l) in factors.iter().enumerate() {
                let z = DVector::from_fn(m * t, |_, _| normal(&mut rng));
                let v = l * z;
                for (g, xg) in x.iter_mut().enumerate() {
                    for s in 0..t {
                        xg[(j, s)] = v[g * t + s];
                    }
                }
            }
            observe(&truth, &x, &mut rng)
        })
        .collect();
    Ok((finish(config, trials, "time")?, truth))
}

/// Samples data through the frequency domain: latent spectra are drawn on a
/// grid of length `3T` with conjugate symmetry, delayed by phase factors,
/// transformed back, and the middle `T` samples are kept.
pub fn generate_freq(config: &ScenarioConfig) -> Result<(Dataset, GroundTruth)> {
    let truth = draw_ground_truth(config)?;
    let (p, m, t) = (config.p(), config.m(), config.t);
    let len = 3 * t;
    let grid = frequency_grid(len, config.delta)?;
    let dft = UnitaryDft::new(len)?;
    let spectra: Vec<Vec<f64>> = (0..p)
        .map(|j| grid.f.iter().map(|&f| discrete_psd(f, truth.gp.tau[j], truth.gp.sigma2[j], config.delta)).collect())
        .collect();
    let trials = (0..config.n)
        .into_par_iter()
        .map(|n| -> Result<DMatrix<f64>> {
            let mut rng = substream(config.seed, n as u64 + 1);
            let mut x = vec![DMatrix::zeros(p, t); m];
            for j in 0..p {
                let mut z = vec![Complex64::new(0.0, 0.0); len];
                for l in 0..grid.half_len() {
                    let k = grid.mirror(l);
                    let s = spectra[j][l];
                    if k == l {
                        z[l] = Complex64::new(s.sqrt() * normal(&mut rng), 0.0);
                    } else {
                        let sd = (0.5 * s).sqrt();
                        z[l] = Complex64::new(sd * normal(&mut rng), sd * normal(&mut rng));
                        z[k] = z[l].conj();
                    }
                }
                for (g, xg) in x.iter_mut().enumerate() {
                    let shifted: Vec<Complex64> = z
                        .iter()
                        .zip(&grid.f)
                        .map(|(v, &f)| v * phase_factor(f, truth.gp.delays[j][g]))
                        .collect();
                    let series = dft.inverse(&shifted)?;
                    for s in 0..t {
                        xg[(j, s)] = series[t + s].re;
                    }
                }
            }
            Ok(observe(&truth, &x, &mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((finish(config, trials, "frequency")?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_their_descriptions() {
        let demo = make_scenario("demo").unwrap();
        assert_eq!(demo.p(), 4);
        assert_eq!((demo.n, demo.t, demo.m(), demo.groups.iter().sum::<usize>()), (100, 100, 2, 20));
        let delays: Vec<f64> = demo.delays.iter().map(|d| d[1]).filter(|&v| v != 0.0).collect();
        assert_eq!(delays, vec![12.0, -23.0]);
        let st = make_scenario("scaling_T").unwrap();
        assert_eq!((st.tau[0], st.delays[0][1]), (100.0, 10.0));
        let ms = make_scenario("model_selection").unwrap();
        assert!(ms.tau.iter().all(|&v| v == 50.0));
        assert_eq!(ms.m(), 1);
        let sm = make_scenario("scaling_M").unwrap().with_groups(8, 24, 20.0);
        assert_eq!(sm.groups, vec![3; 8]);
        assert!(sm.delays[0][1..].iter().all(|&d| (0.0..=20.0).contains(&d)));
        assert!(make_scenario("nope").is_err());
    }

    #[test]
    fn realized_snr_matches_target() {
        let cfg = make_scenario("demo").unwrap();
        let truth = draw_ground_truth(&cfg).unwrap();
        for v in truth.snr() {
            assert!((v - 0.2).abs() < 1e-12 * 0.2 + 0.004);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = ScenarioConfig { n: 3, t: 20, ..make_scenario("scaling_T").unwrap() };
        let (a, _) = generate_freq(&cfg).unwrap();
        let (b, _) = generate_freq(&cfg).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_time(&cfg).unwrap();
        let (d, _) = generate_time(&cfg).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn time_guard_is_enforced() {
        let cfg = ScenarioConfig { t: 3000, ..make_scenario("scaling_T").unwrap() };
        assert!(matches!(generate_time(&cfg), Err(MdlagError::ResourceGuard(_))));
    }

    #[test]
    fn zero_signal_variance_is_noise_variance() {
        // A vanishing SNR leaves only noise, whose variance is 1/φ.
        let cfg = ScenarioConfig { n: 400, t: 20, snr: vec![1e-8, 1e-8], ..make_scenario("scaling_T").unwrap() };
        let (ds, truth) = generate_freq(&cfg).unwrap();
        let (_, var) = ds.unit_moments();
        let phi: Vec<f64> = truth.phi.iter().flat_map(|v| v.iter().copied()).collect();
        for (v, f) in var.iter().zip(phi) {
            let target = 1.0 / f;
            assert!((v - target).abs() < 5.0 * target * (2.0 / 8000.0_f64).sqrt());
        }
    }
}
