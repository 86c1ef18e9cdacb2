//! Analytic GP gradients against central finite differences.

mod common;

use common::*;

#[test]
fn time_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let (data, model) = random_instance(seed, 2, vec![2, 3], 6, 3);
        let err = gradient_error(&time_objective(&data, &model), &model.gp);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn inducing_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let (data, model) = random_instance(seed, 2, vec![2, 3], 8, 3);
        let err = gradient_error(&inducing_objective(&data, &model, 4), &model.gp);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn frequency_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let (data, model) = random_instance(seed, 2, vec![2, 3, 2], 9, 3);
        let err = gradient_error(&frequency_objective(&data, &model), &model.gp);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}
