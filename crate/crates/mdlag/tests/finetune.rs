//! Time-domain refinement of frequency fits on short trials.

use mdlag::fit::{fit, fit_from, FitConfig, Method};
use mdlag::synthesis::{generate_freq, make_scenario, ScenarioConfig};

#[test]
fn refinement_moves_timescales_toward_the_truth() {
    let mut closer = 0;
    let mut moved = 0;
    for seed in 0..10 {
        let cfg = ScenarioConfig { seed, ..make_scenario("scaling_T").unwrap() };
        let data = generate_freq(&cfg).unwrap().0;
        let freq = fit(&data, &FitConfig::new(Method::Frequency, 1)).unwrap();
        let mut c = FitConfig::new(Method::Time, 1);
        c.max_iter = 500;
        let tuned = fit_from(&data, &c, freq.model.clone()).unwrap();
        assert!(tuned.max_relative_decrease() <= 1e-9);
        let (before, after) = (freq.model.gp.tau[0], tuned.model.gp.tau[0]);
        moved += usize::from((after - before).abs() > 0.0);
        closer += usize::from((after - 100.0).abs() < (before - 100.0).abs());
    }
    assert_eq!(moved, 10);
    assert!(closer > 5, "closer on {closer}/10 seeds");
}
