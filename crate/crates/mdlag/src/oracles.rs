//! Brute-force reference implementations for the test suite: dense
//! Gaussian conditioning, central finite differences, the direct DFT sum
//! and quadrature moments of Gamma distributions.
//!
//! These share no code with the fitters and are compiled only for tests or
//! with the `oracles` feature.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::error::{MdlagError, Result};

/// Conditions `N(mean, cov)` on `x[observed] = values`: returns the mean and
/// covariance of the remaining coordinates, in increasing index order.
pub fn gaussian_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed: &[usize],
    values: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = mean.len();
    if cov.shape() != (n, n) || observed.len() != values.len() || observed.iter().any(|&i| i >= n) {
        return Err(MdlagError::Dimension("inconsistent conditioning inputs".into()));
    }
    let hidden: Vec<usize> = (0..n).filter(|i| !observed.contains(i)).collect();
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |a, b| cov[(rows[a], cols[b])]);
    let s_oo = pick(observed, observed);
    let s_ho = pick(&hidden, observed);
    let s_hh = pick(&hidden, &hidden);
    let inv = s_oo
        .clone()
        .cholesky()
        .ok_or(MdlagError::NotPositiveDefinite { size: observed.len() })?
        .inverse();
    let resid = DVector::from_fn(observed.len(), |a, _| values[a] - mean[observed[a]]);
    let mu_h = DVector::from_fn(hidden.len(), |a, _| mean[hidden[a]]) + &s_ho * &inv * resid;
    let cov_h = s_hh - &s_ho * inv * s_ho.transpose();
    Ok((mu_h, cov_h))
}

/// Central finite-difference gradient of `f` at `x` with step
/// `h·max(1, |x_i|)` per coordinate. With `richardson`, two step sizes are
/// combined to cancel the `O(h²)` error term.
pub fn finite_diff<F>(f: F, x: &[f64], h: f64, richardson: bool) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let central = |i: usize, step: f64| {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[i] += step;
        down[i] -= step;
        (f(&up) - f(&down)) / (2.0 * step)
    };
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            if richardson {
                (4.0 * central(i, step / 2.0) - central(i, step)) / 3.0
            } else {
                central(i, step)
            }
        })
        .collect()
}

/// Direct `O(T²)` unitary DFT: `x̃_k = T^{-1/2} Σ_t x_t exp(-i 2π k t / T)`.
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let t = x.len();
    let scale = 1.0 / (t as f64).sqrt();
    (0..t)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(s, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * s) % t) as f64 / t as f64))
                .sum::<Complex64>()
                * scale
        })
        .collect()
}

/// `E[g(X)]` for `X ~ Gamma(shape a, rate b)` by trapezoidal quadrature on
/// `u = ln x`.
fn gamma_expectation<G: Fn(f64) -> f64>(a: f64, b: f64, g: G) -> f64 {
    // The log-density in u is a·u − b·eᵘ + a ln b − ln Γ(a), peaked at u* = ln(a/b).
    let center = (a / b).ln();
    let width = 40.0 / a.sqrt().min(1.0) + 10.0;
    let steps = 200_000;
    let lo = center - width;
    let hu = 2.0 * width / steps as f64;
    let norm = a * b.ln() - ln_gamma(a);
    let mut acc = 0.0;
    for k in 0..=steps {
        let u = lo + k as f64 * hu;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        let dens = (a * u - b * u.exp() + norm).exp();
        acc += w * g(u) * dens;
    }
    acc * hu
}

/// `E[X]` of `Gamma(a, b)` by quadrature.
pub fn gamma_mean_quadrature(a: f64, b: f64) -> f64 {
    gamma_expectation(a, b, f64::exp)
}

/// `E[ln X]` of `Gamma(a, b)` by quadrature.
pub fn gamma_log_mean_quadrature(a: f64, b: f64) -> f64 {
    gamma_expectation(a, b, |u| u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn conditioning_textbook_case() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (m, c) = gaussian_condition(&DVector::zeros(2), &cov, &[0], &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(m[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(c[(0, 0)], 0.75, epsilon = 1e-14);
    }

    #[test]
    fn conditioning_independent_blocks() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let (m, c) = gaussian_condition(&mean, &cov, &[1], &DVector::from_element(1, 5.0)).unwrap();
        assert_eq!((m[0], c[(0, 0)]), (1.0, 2.0));
    }

    #[test]
    fn finite_differences() {
        let g = finite_diff(|x| x[0] * x[0], &[3.0], 1e-5, false);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = [0.3, -0.7];
        let quad = |v: &[f64]| {
            let v = DVector::from_column_slice(v);
            0.5 * v.dot(&(&a * &v))
        };
        let g = finite_diff(quad, &x, 1e-4, true);
        let exact = &a * DVector::from_column_slice(&x);
        for i in 0..2 {
            assert!((g[i] - exact[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn naive_dft_of_impulse_and_constant() {
        let mut imp = vec![Complex64::new(0.0, 0.0); 4];
        imp[0] = Complex64::new(1.0, 0.0);
        assert!(naive_dft(&imp).iter().all(|z| (z - Complex64::new(0.5, 0.0)).norm() < 1e-15));
        let c = naive_dft(&[Complex64::new(1.0, 0.0); 4]);
        assert!((c[0] - Complex64::new(2.0, 0.0)).norm() < 1e-14);
        assert!(c[1..].iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn gamma_quadrature_moments() {
        assert_relative_eq!(gamma_mean_quadrature(3.0, 2.0), 1.5, epsilon = 1e-9);
        // E[ln X] = ψ(1) − ln 1 = −γ_Euler for Gamma(1, 1).
        assert_relative_eq!(gamma_log_mean_quadrature(1.0, 1.0), -0.577_215_664_901_532_9, epsilon = 1e-9);
    }
}
