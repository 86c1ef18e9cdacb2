//! Whole-fit properties: monotone lower bound, determinism, zero-iteration
//! fits and the full-grid inducing reduction.

mod common;

use common::full_grid_inducing_vs_time;
use mdlag::fit::{fit, FitConfig, Method};
use mdlag::synthesis::{generate_time, make_scenario, ScenarioConfig};
use mdlag::Dataset;

fn small_data() -> Dataset {
    let cfg = ScenarioConfig { n: 10, t: 20, ..make_scenario("scaling_T").unwrap() };
    generate_time(&cfg).unwrap().0
}

fn config(method: Method) -> FitConfig {
    let mut c = FitConfig::new(method, 2);
    c.max_iter = 60;
    if method == Method::Inducing {
        c.inducing_points = Some(8);
    }
    c
}

#[test]
fn lower_bound_never_decreases() {
    let data = small_data();
    for method in [Method::Time, Method::Inducing, Method::Frequency] {
        let report = fit(&data, &config(method)).unwrap();
        assert!(report.max_relative_decrease() <= 1e-9, "{method}: {:e}", report.max_relative_decrease());
        assert!(report.elbo.last().unwrap() > report.elbo.first().unwrap());
    }
}

#[test]
fn zero_iterations_return_the_initialization() {
    let data = small_data();
    for method in [Method::Time, Method::Inducing, Method::Frequency] {
        let mut c = config(method);
        c.max_iter = 0;
        let report = fit(&data, &c).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.elbo.len(), 1);
        assert!(report.elbo[0].is_finite());
        let init = mdlag::initialize(&data, 2, c.seed, &c.hyper).unwrap();
        assert_eq!(report.model, init);
    }
}

#[test]
fn fits_are_deterministic() {
    let data = small_data();
    let a = fit(&data, &config(Method::Frequency)).unwrap();
    let b = fit(&data, &config(Method::Frequency)).unwrap();
    assert_eq!(a.elbo, b.elbo);
    assert_eq!(a.model, b.model);
}

#[test]
fn full_grid_inducing_matches_time() {
    let worst = full_grid_inducing_vs_time(0);
    assert!(worst < 1e-6, "{worst:e}");
}
