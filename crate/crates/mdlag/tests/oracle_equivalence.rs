//! Exact time-domain inference against dense Gaussian conditioning.

mod common;

use common::{lgo_time_oracle_error, point_mass_loadings, qx_time_oracle_error, random_instance};

const SHAPES: [(usize, &[usize], usize); 3] = [(1, &[2, 2], 8), (2, &[2, 3], 5), (1, &[1, 2, 2], 4)];

#[test]
fn latent_posterior_matches_conditioning() {
    for (seed, (p, groups, t)) in SHAPES.iter().enumerate() {
        let (data, model) = random_instance(seed as u64, *p, groups.to_vec(), *t, 3);
        let model = point_mass_loadings(&model);
        let q: usize = groups.iter().sum();
        assert!(p * groups.len() * t + q * t <= 60);
        let err = qx_time_oracle_error(&model, &data);
        assert!(err < 1e-8, "shape {seed}: {err:e}");
    }
}

#[test]
fn leave_group_out_matches_conditioning() {
    for (seed, (p, groups, t)) in SHAPES.iter().enumerate() {
        let (data, model) = random_instance(10 + seed as u64, *p, groups.to_vec(), *t, 2);
        let model = point_mass_loadings(&model);
        for held_out in 0..groups.len() {
            let err = lgo_time_oracle_error(&model, &data, held_out);
            assert!(err < 1e-8, "shape {seed}, group {held_out}: {err:e}");
        }
    }
}
