//! Benchmark fixtures: the scaling scenarios at a given trial length or
//! group count, and fit configurations that run a fixed number of
//! iterations.

use mdlag::synthesis::{generate_freq, make_scenario, ScenarioConfig};
use mdlag::{Dataset, FitConfig, Method};

/// Trials per benchmark dataset.
pub const TRIALS: usize = 25;
/// Units in total on the group-count axis.
pub const UNITS: usize = 24;
/// Inducing points per trial for the inducing method.
pub const INDUCING_POINTS: usize = 13;

/// Scaling-T scenario (two groups) with `t` samples per trial.
pub fn dataset_over_t(t: usize) -> Dataset {
    let cfg = ScenarioConfig { n: TRIALS, t, ..make_scenario("scaling_T").expect("preset exists") };
    generate_freq(&cfg).expect("valid scenario").0
}

/// Scaling-M scenario with [`UNITS`] units split over `m` groups, T = 50.
pub fn dataset_over_m(m: usize) -> Dataset {
    let cfg = ScenarioConfig { n: TRIALS, t: 50, ..make_scenario("scaling_M").expect("preset exists") }
        .with_groups(m, UNITS, 20.0);
    generate_freq(&cfg).expect("valid scenario").0
}

/// One-latent configuration that runs exactly `iterations` iterations.
pub fn fixed_iterations(method: Method, iterations: usize) -> FitConfig {
    let mut c = FitConfig::new(method, 1);
    c.max_iter = iterations;
    c.tol = 0.0;
    c.inducing_points = Some(INDUCING_POINTS);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_the_requested_shape() {
        let d = dataset_over_t(16);
        assert_eq!((d.n(), d.t, d.m()), (TRIALS, 16, 2));
        let d = dataset_over_m(4);
        assert_eq!((d.m(), d.q()), (4, UNITS));
        let report = mdlag::fit(&dataset_over_t(16), &fixed_iterations(Method::Frequency, 3)).unwrap();
        assert_eq!(report.iterations, 3);
    }
}
