//! Randomized invariants of the building blocks.

use mdlag::evaluate::{r2_lgo, unit_means};
use mdlag::kernels::{build_K, SqExpDelayed, DEFAULT_SIGMA2};
use mdlag::numerics::{inverse_unitary_dft, unitary_dft};
use mdlag::state::{shared_variance_fraction, significant_latents, VarianceMeasure};
use mdlag::{initialize, Dataset, Hyperparams};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0..5.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_roundtrip(x in prop::collection::vec(-10.0..10.0f64, 1..64)) {
        let back = inverse_unitary_dft(&unitary_dft(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b.re).abs() < 1e-10 && b.im.abs() < 1e-10);
        }
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = unitary_dft(&x).unwrap().iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1.0));
    }

    #[test]
    fn kernel_matrix_is_symmetric_with_unit_diagonal(
        tau in 10.0..200.0f64,
        d in -40.0..40.0f64,
        t in 2usize..12,
    ) {
        let kernel = SqExpDelayed::new(tau, DEFAULT_SIGMA2, vec![0.0, d]).unwrap();
        let k = build_K(&kernel, 2, t, 20.0);
        prop_assert!((&k - k.transpose()).amax() < 1e-14);
        prop_assert!(k.diagonal().iter().all(|v| (v - 1.0).abs() < 1e-14));
        prop_assert!(k.clone().cholesky().is_some());
    }

    #[test]
    fn shared_variance_sums_to_one(seed in 0u64..1000, p in 1usize..6) {
        let trials = vec![DMatrix::from_fn(5, 8, |r, c| ((r * 7 + c * 3 + seed as usize) % 11) as f64); 3];
        let data = Dataset::new(8, 20.0, vec![2, 3], trials).unwrap();
        let model = initialize(&data, p, seed, &Hyperparams::default()).unwrap();
        for measure in [VarianceMeasure::LoadingNorm, VarianceMeasure::InverseArd] {
            let nu = shared_variance_fraction(&model.reg, measure);
            for g in &nu {
                prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(g.iter().all(|v| *v >= 0.0));
            }
            let sig = significant_latents(&nu, 0.02);
            prop_assert_eq!(sig.count, sig.latents.len());
            prop_assert!(sig.count >= 1);
        }
    }

    #[test]
    fn r2_ignores_trial_order(a in matrix(3, 10), b in matrix(3, 10), c in matrix(3, 10), d in matrix(3, 10)) {
        let actual = vec![a.clone(), b.clone()];
        let predicted = vec![c.clone(), d.clone()];
        let r = r2_lgo(&actual, &predicted, &unit_means(&actual, 1), 1);
        let swapped = r2_lgo(&[b, a], &[d, c], &unit_means(&actual, 1), 1);
        match (r, swapped) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(x <= 1.0);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "ordering changed the outcome"),
        }
    }
}
