//! Random small instances shared by the integration and acceptance tests.
#![allow(dead_code)]

use mdlag::fit::frequency::{update_qx_freq, FreqGpObjective, SpectralDataset};
use mdlag::fit::inducing::{latent_cov_slice, latent_means_from_w, update_qw, InducingCaches, InducingGpObjective};
use mdlag::evaluate::predict_lgo_time;
use mdlag::fit::time::{update_qx_time, TimeGpObjective};
use mdlag::fit::{fit, natural_coordinates, set_natural_coordinates, FitConfig, GpObjective, LatentPosterior, Method};
use mdlag::synthesis::{generate_time, make_scenario, ScenarioConfig};
use mdlag::kernels::{k_cross, InducingGrid};
use mdlag::oracles::{finite_diff, gaussian_condition};
use mdlag::{initialize, Dataset, GpParams, Hyperparams, Model};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Small random dataset and a model with randomized GP parameters and
/// loadings of order one.
pub fn random_instance(seed: u64, p: usize, groups: Vec<usize>, t: usize, n: usize) -> (Dataset, Model) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q: usize = groups.iter().sum();
    let trials = (0..n)
        .map(|_| DMatrix::from_fn(q, t, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let data = Dataset::new(t, 20.0, groups, trials).unwrap();
    let mut model = initialize(&data, p, seed, &Hyperparams::default()).unwrap();
    for g in model.reg.groups.iter_mut() {
        g.mu_c = DMatrix::from_fn(g.q(), p, |_, _| rng.sample::<f64, _>(StandardNormal));
        g.b_phi = g.b_phi.map(|_| model.reg.a_phi / rng.random_range(0.5..2.0));
    }
    randomize_gp(&mut model.gp, &mut rng);
    (data, model)
}

pub fn randomize_gp(gp: &mut GpParams, rng: &mut ChaCha8Rng) {
    for j in 0..gp.p() {
        gp.tau[j] = rng.random_range(30.0..150.0);
        for g in 1..gp.m() {
            gp.delays[j][g] = rng.random_range(-25.0..25.0);
        }
    }
}

/// Largest relative discrepancy between the analytic gradient of `obj` and
/// central finite differences in `(ln γ, D)` coordinates.
pub fn gradient_error(obj: &dyn GpObjective, gp: &GpParams) -> f64 {
    let (_, g) = obj.value_grad(gp).unwrap();
    let x0 = natural_coordinates(gp);
    let f = |x: &[f64]| {
        let mut trial = gp.clone();
        set_natural_coordinates(&mut trial, x);
        obj.value(&trial).unwrap()
    };
    let fd = finite_diff(f, &x0, 1e-5, true);
    let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    g.iter().zip(&fd).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max)
}

pub fn time_objective(data: &Dataset, model: &Model) -> TimeGpObjective {
    TimeGpObjective::new(&update_qx_time(model, data).unwrap(), data.delta)
}

pub fn inducing_objective(data: &Dataset, model: &Model, t_ind: usize) -> InducingGpObjective {
    let grid = InducingGrid::uniform(t_ind, data.t).unwrap();
    let post = update_qw(model, data, &grid).unwrap();
    InducingGpObjective::new(model, data, &post)
}

pub fn frequency_objective(data: &Dataset, model: &Model) -> FreqGpObjective {
    let spec = SpectralDataset::new(data, false).unwrap();
    let post = update_qx_freq(model, &spec).unwrap();
    FreqGpObjective::new(model, &spec, &post)
}

/// The same model with point-mass loadings, so that the latent update is
/// exact Gaussian conditioning.
pub fn point_mass_loadings(model: &Model) -> Model {
    let mut out = model.clone();
    for g in out.reg.groups.iter_mut() {
        g.sigma_c.iter_mut().for_each(|s| s.fill(0.0));
    }
    out
}

/// Dense joint Gaussian of `(x, y)` for one trial: `x` in the stacked
/// `(t·M + m)·p + j` order, followed by `y` in `t·q + r` order.
pub fn joint_gaussian(model: &Model, t: usize) -> (DVector<f64>, DMatrix<f64>) {
    let (p, m, q) = (model.p(), model.m(), model.q());
    let nx = p * m * t;
    let ny = q * t;
    let xi = |s: usize, g: usize, j: usize| (s * m + g) * p + j;
    let mut kx = DMatrix::zeros(nx, nx);
    for j in 0..p {
        let kernel = model.gp.kernel(j);
        for s1 in 0..t {
            for g1 in 0..m {
                for s2 in 0..t {
                    for g2 in 0..m {
                        kx[(xi(s1, g1, j), xi(s2, g2, j))] = k_cross(s1, s2, g1, g2, &kernel, model.delta);
                    }
                }
            }
        }
    }
    let offsets = model.offsets();
    let mut a = DMatrix::zeros(ny, nx);
    let mut mean = DVector::zeros(nx + ny);
    let mut noise = DMatrix::zeros(ny, ny);
    for (g, gp) in model.reg.groups.iter().enumerate() {
        let phi = model.reg.phi_mean(g);
        for s in 0..t {
            for r in 0..gp.q() {
                let row = s * q + offsets[g] + r;
                for j in 0..p {
                    a[(row, xi(s, g, j))] = gp.mu_c[(r, j)];
                }
                mean[nx + row] = gp.mu_d[r];
                noise[(row, row)] = 1.0 / phi[r];
            }
        }
    }
    let kxy = &kx * a.transpose();
    let kyy = &a * &kxy + noise;
    let mut cov = DMatrix::zeros(nx + ny, nx + ny);
    cov.view_mut((0, 0), (nx, nx)).copy_from(&kx);
    cov.view_mut((0, nx), (nx, ny)).copy_from(&kxy);
    cov.view_mut((nx, 0), (ny, nx)).copy_from(&kxy.transpose());
    cov.view_mut((nx, nx), (ny, ny)).copy_from(&kyy);
    (mean, cov)
}

/// Observations of trial `y` (`q × T`) in `t·q + r` order.
pub fn stacked_observations(y: &DMatrix<f64>) -> DVector<f64> {
    let (q, t) = y.shape();
    DVector::from_fn(q * t, |i, _| y[(i % q, i / q)])
}

/// Largest absolute deviation of the time-domain latent posterior from
/// dense conditioning, over every trial mean and the shared covariance.
pub fn qx_time_oracle_error(model: &Model, data: &Dataset) -> f64 {
    let post = update_qx_time(model, data).unwrap();
    let (mean, cov) = joint_gaussian(model, data.t);
    let nx = model.p() * model.m() * data.t;
    let observed: Vec<usize> = (nx..mean.len()).collect();
    let mut err: f64 = 0.0;
    for (n, y) in data.trials.iter().enumerate() {
        let (mu, sigma) = gaussian_condition(&mean, &cov, &observed, &stacked_observations(y)).unwrap();
        err = err.max((&mu - &post.mu[n]).amax());
        err = err.max((&sigma - &post.sigma).amax());
    }
    err
}

/// Largest absolute deviation of leave-group-out predictions from dense
/// conditioning on the other groups.
pub fn lgo_time_oracle_error(model: &Model, data: &Dataset, held_out: usize) -> f64 {
    let report = predict_lgo_time(model, data, held_out).unwrap();
    let (mean, cov) = joint_gaussian(model, data.t);
    let nx = model.p() * model.m() * data.t;
    let q = model.q();
    let rows = data.group_rows(held_out);
    let observed: Vec<usize> = (0..q * data.t).filter(|i| !rows.contains(&(i % q))).map(|i| nx + i).collect();
    let mut err: f64 = 0.0;
    for (n, y) in data.trials.iter().enumerate() {
        let stacked = stacked_observations(y);
        let values = DVector::from_iterator(observed.len(), observed.iter().map(|&i| stacked[i - nx]));
        let (mu, _) = gaussian_condition(&mean, &cov, &observed, &values).unwrap();
        // Hidden coordinates are all of x followed by the held-out rows in t·q + r order.
        for s in 0..data.t {
            for (k, _) in rows.clone().enumerate() {
                let oracle = mu[nx + s * rows.len() + k];
                err = err.max((oracle - report.predicted[n][(k, s)]).abs());
            }
        }
    }
    err
}

/// Fits one latent to a single-group dataset with the time method and with
/// inducing points on every sample, and returns the largest deviation of
/// the inferred latent means and marginal variances.
pub fn full_grid_inducing_vs_time(seed: u64) -> f64 {
    let cfg = ScenarioConfig {
        n: 8,
        t: 15,
        groups: vec![6],
        tau: vec![100.0],
        delays: vec![vec![0.0]],
        snr: vec![0.5],
        seed,
        ..make_scenario("scaling_T").unwrap()
    };
    let data = generate_time(&cfg).unwrap().0;
    let mut ct = FitConfig::new(Method::Time, 1);
    ct.max_iter = 20;
    let mut ci = ct.clone();
    ci.method = Method::Inducing;
    ci.inducing_points = Some(data.t);
    let rt = fit(&data, &ct).unwrap();
    let ri = fit(&data, &ci).unwrap();
    let (LatentPosterior::Time(pt), LatentPosterior::Inducing(pi)) = (&rt.latents, &ri.latents) else {
        panic!("unexpected posterior kinds");
    };
    let caches = InducingCaches::new(&ri.model.gp, 1, data.t, &pi.grid, data.delta).unwrap();
    let mut worst: f64 = 0.0;
    for n in 0..data.n() {
        let xt = pt.group_means(n, 0);
        let xi = latent_means_from_w(pi, &caches, n, 0);
        worst = worst.max((xt - xi).abs().max());
    }
    for s in 0..data.t {
        let vt = pt.sigma[(pt.index(s, 0, 0), pt.index(s, 0, 0))];
        let vi = latent_cov_slice(pi, &caches, 0, s)[(0, 0)];
        worst = worst.max((vt - vi).abs());
    }
    worst
}
