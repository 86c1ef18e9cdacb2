//! Delayed squared-exponential kernels, their inducing-variable variants,
//! spectral densities, phase factors and the circulant approximation.
//!
//! Sample `t` (zero-based) of a trial sits at time `(t + 1)·δ` ms, and the
//! latent seen by group `m` at that sample is the underlying process at
//! `(t + 1)·δ − D^m`. Inducing locations are expressed in sample units, so
//! `ξ = 1` is the first sample and `ξ = T` the last.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{MdlagError, Result};
use crate::numerics::FrequencyGrid;

/// Tolerance (ms) under which a time difference counts as zero for the
/// white-noise term.
pub const DT_ZERO_TOL: f64 = 1e-9;

/// Default white-noise variance of every latent process.
pub const DEFAULT_SIGMA2: f64 = 1e-3;

/// A stationary kernel described by its covariance function, its spectral
/// amplitude and its delay phase.
pub trait StationaryKernel {
    /// Covariance at time difference `dt` (ms). `same_series` is true when
    /// both arguments belong to the same observed sequence, which is the
    /// only case where the white-noise term can contribute.
    fn covariance(&self, dt: f64, same_series: bool) -> f64;

    /// Continuous-time spectral density at frequency `f` (cycles/ms).
    fn amplitude(&self, f: f64) -> f64;

    /// Phase factor of a delay `delay` (ms) at frequency `f`.
    fn phase(&self, f: f64, delay: f64) -> Complex64 {
        phase_factor(f, delay)
    }
}

/// Squared-exponential kernel of one latent, with per-group delays.
#[derive(Debug, Clone, PartialEq)]
pub struct SqExpDelayed {
    /// Timescale in ms.
    pub tau: f64,
    /// White-noise variance in (0, 1).
    pub sigma2: f64,
    /// Delay of each group in ms; the first entry is 0.
    pub delays: Vec<f64>,
}

impl SqExpDelayed {
    /// Creates a kernel, checking `tau > 0`, `0 ≤ sigma2 < 1` and a zero
    /// first delay.
    pub fn new(tau: f64, sigma2: f64, delays: Vec<f64>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(MdlagError::Config(format!("timescale must be positive, got {tau}")));
        }
        if !(0.0..1.0).contains(&sigma2) {
            return Err(MdlagError::Config(format!("GP noise variance must lie in [0, 1), got {sigma2}")));
        }
        if delays.first().is_some_and(|d| *d != 0.0) {
            return Err(MdlagError::Config("the first group's delay must be 0".into()));
        }
        Ok(Self { tau, sigma2, delays })
    }

    /// `γ = 1/τ²`.
    pub fn gamma(&self) -> f64 {
        1.0 / (self.tau * self.tau)
    }

    fn delay(&self, m: usize) -> f64 {
        self.delays.get(m).copied().unwrap_or(0.0)
    }
}

impl StationaryKernel for SqExpDelayed {
    fn covariance(&self, dt: f64, same_series: bool) -> f64 {
        se_value(dt, self.gamma(), self.sigma2, same_series)
    }

    fn amplitude(&self, f: f64) -> f64 {
        psd(f, self.tau, self.sigma2)
    }
}

/// `(1-σ²) exp(-γ Δt²/2) + σ² [same ∧ Δt = 0]`.
pub fn se_value(dt: f64, gamma: f64, sigma2: f64, same_series: bool) -> f64 {
    let smooth = (1.0 - sigma2) * (-0.5 * gamma * dt * dt).exp();
    if same_series && dt.abs() < DT_ZERO_TOL {
        smooth + sigma2
    } else {
        smooth
    }
}

/// Derivative of [`se_value`] with respect to `γ`.
pub fn se_dgamma(dt: f64, gamma: f64, sigma2: f64) -> f64 {
    -(1.0 - sigma2) * 0.5 * dt * dt * (-0.5 * gamma * dt * dt).exp()
}

/// Derivative of [`se_value`] with respect to `Δt`.
pub fn se_ddt(dt: f64, gamma: f64, sigma2: f64) -> f64 {
    -(1.0 - sigma2) * gamma * dt * (-0.5 * gamma * dt * dt).exp()
}

/// Time difference entering the kernel between sample `t1` of group `m1`
/// and sample `t2` of group `m2` (zero-based samples).
pub fn delayed_dt(t1: usize, t2: usize, d1: f64, d2: f64, delta: f64) -> f64 {
    ((t2 as f64 + 1.0) * delta - d2) - ((t1 as f64 + 1.0) * delta - d1)
}

/// Kernel value between sample `t1` of group `m1` and sample `t2` of group
/// `m2` for one latent.
pub fn k_cross(t1: usize, t2: usize, m1: usize, m2: usize, kernel: &SqExpDelayed, delta: f64) -> f64 {
    let dt = delayed_dt(t1, t2, kernel.delay(m1), kernel.delay(m2), delta);
    kernel.covariance(dt, m1 == m2)
}

/// Full covariance of one latent over all groups and samples, indexed
/// `m·T + t`.
#[allow(non_snake_case)]
pub fn build_K(kernel: &SqExpDelayed, m: usize, t: usize, delta: f64) -> DMatrix<f64> {
    let n = m * t;
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        let (m1, t1) = (a / t, a % t);
        for b in a..n {
            let (m2, t2) = (b / t, b % t);
            let v = k_cross(t1, t2, m1, m2, kernel, delta);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// Uniform grid of inducing locations in sample units.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingGrid {
    /// Inducing locations, strictly increasing, from 1 to `T`.
    pub xi: Vec<f64>,
}

impl InducingGrid {
    /// `t_ind` equally spaced locations with `ξ_1 = 1` and `ξ_{t_ind} = T`.
    /// A single inducing point sits at `ξ = 1`.
    pub fn uniform(t_ind: usize, t: usize) -> Result<Self> {
        if t_ind == 0 || t == 0 {
            return Err(MdlagError::Config("inducing grid needs T_ind ≥ 1 and T ≥ 1".into()));
        }
        if t_ind > t {
            return Err(MdlagError::Config(format!(
                "inducing point count {t_ind} exceeds trial length {t}"
            )));
        }
        if t_ind == 1 {
            return Ok(Self { xi: vec![1.0] });
        }
        let span = (t - 1) as f64;
        let xi = (0..t_ind)
            .map(|k| 1.0 + span * k as f64 / (t_ind - 1) as f64)
            .collect();
        Ok(Self { xi })
    }

    /// Number of inducing points.
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    /// True when the grid holds no points.
    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Covariance among inducing variables of one latent.
#[allow(non_snake_case)]
pub fn build_Kw(kernel: &SqExpDelayed, grid: &InducingGrid, delta: f64) -> DMatrix<f64> {
    let n = grid.len();
    let g = kernel.gamma();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = se_value((grid.xi[b] - grid.xi[a]) * delta, g, kernel.sigma2, true);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// Time difference between inducing location `xi` and sample `t` of a
/// group with delay `d`.
pub fn inducing_dt(t: usize, xi: f64, d: f64, delta: f64) -> f64 {
    xi * delta - ((t as f64 + 1.0) * delta - d)
}

/// Cross-covariance between the latent at every (group, sample), indexed
/// `m·T + t`, and the inducing variables.
#[allow(non_snake_case)]
pub fn build_Kxw(kernel: &SqExpDelayed, m: usize, t: usize, grid: &InducingGrid, delta: f64) -> DMatrix<f64> {
    let g = kernel.gamma();
    DMatrix::from_fn(m * t, grid.len(), |row, col| {
        let dt = inducing_dt(row % t, grid.xi[col], kernel.delay(row / t), delta);
        se_value(dt, g, kernel.sigma2, true)
    })
}

/// Continuous-time spectral density of the normalized SE kernel:
/// `(1-σ²) √(2π) τ exp(-½ (2π f τ)²) + σ²`.
pub fn psd(f: f64, tau: f64, sigma2: f64) -> f64 {
    let w = 2.0 * PI * f * tau;
    (1.0 - sigma2) * (2.0 * PI).sqrt() * tau * (-0.5 * w * w).exp() + sigma2
}

/// Spectral density of the sampled process on the DFT grid: the smooth part
/// of [`psd`] divided by the sampling period, plus the white-noise floor.
pub fn discrete_psd(f: f64, tau: f64, sigma2: f64, delta: f64) -> f64 {
    let w = 2.0 * PI * f * tau;
    (1.0 - sigma2) * (2.0 * PI).sqrt() * (tau / delta) * (-0.5 * w * w).exp() + sigma2
}

/// Derivative of [`discrete_psd`] with respect to `γ = 1/τ²`.
pub fn discrete_psd_dgamma(f: f64, gamma: f64, sigma2: f64, delta: f64) -> f64 {
    let w2 = (2.0 * PI * f).powi(2);
    (1.0 - sigma2) * (PI / 2.0).sqrt() / delta
        * (-w2 / (2.0 * gamma)).exp()
        * (w2 * gamma.powf(-2.5) - gamma.powf(-1.5))
}

/// `exp(-i 2π f D)`.
pub fn phase_factor(f: f64, delay: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * f * delay)
}

/// Cross-spectral density between groups with delays `d1` and `d2`:
/// `h(f; d1) · conj(h(f; d2)) · psd(f)`.
pub fn csd(f: f64, tau: f64, sigma2: f64, d1: f64, d2: f64) -> Complex64 {
    phase_factor(f, d1) * phase_factor(f, d2).conj() * psd(f, tau, sigma2)
}

/// Diagonal of the phase matrix of group `m` at frequency `f`: one entry
/// per latent, given each latent's delay for that group.
pub fn phase_matrix(delays_for_group: &[f64], f: f64) -> Vec<Complex64> {
    delays_for_group.iter().map(|&d| phase_factor(f, d)).collect()
}

/// Phase factors of one latent and one group at every frequency of a grid.
pub fn phase_over_grid(delay: f64, grid: &FrequencyGrid) -> Vec<Complex64> {
    grid.f.iter().map(|&f| phase_factor(f, delay)).collect()
}

/// Time-domain covariance implied by the frequency-domain model for one
/// latent: block `(m1, m2)` is the real part of `Uᴴ H^{m1} S H^{m2 ᴴ} U`,
/// which is circulant.
pub fn circulant_approx(kernel: &SqExpDelayed, m: usize, t: usize, delta: f64) -> Result<DMatrix<f64>> {
    let grid = crate::numerics::frequency_grid(t, delta)?;
    let s: Vec<f64> = grid.f.iter().map(|&f| discrete_psd(f, kernel.tau, kernel.sigma2, delta)).collect();
    let n = m * t;
    let mut out = DMatrix::zeros(n, n);
    for m1 in 0..m {
        for m2 in 0..m {
            // First column of the circulant block: c(k) = (1/T) Σ_l S_l h1 h2* e^{i2π l k / T}.
            let col: Vec<f64> = (0..t)
                .map(|k| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (l, &f) in grid.f.iter().enumerate() {
                        let h = phase_factor(f, kernel.delay(m1)) * phase_factor(f, kernel.delay(m2)).conj();
                        let angle = 2.0 * PI * (l * k) as f64 / t as f64;
                        acc += h * s[l] * Complex64::from_polar(1.0, angle);
                    }
                    acc.re / t as f64
                })
                .collect();
            for t1 in 0..t {
                for t2 in 0..t {
                    out[(m1 * t + t1, m2 * t + t2)] = col[(t1 + t - t2) % t];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kern(tau: f64, sigma2: f64, delays: Vec<f64>) -> SqExpDelayed {
        SqExpDelayed::new(tau, sigma2, delays).unwrap()
    }

    #[test]
    fn zero_lag_is_one() {
        let k = kern(100.0, 1e-3, vec![0.0, 37.5]);
        assert_eq!(k_cross(3, 3, 0, 0, &k, 20.0), 1.0);
        assert_eq!(k_cross(3, 3, 1, 1, &k, 20.0), 1.0);
    }

    #[test]
    fn one_timescale_apart() {
        let k = kern(100.0, 0.0, vec![0.0]);
        assert_relative_eq!(k_cross(0, 5, 0, 0, &k, 20.0), (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn within_group_ignores_delays() {
        let a = kern(80.0, 1e-3, vec![0.0, 30.0]);
        let b = kern(80.0, 1e-3, vec![0.0, -55.0]);
        assert_eq!(k_cross(2, 7, 1, 1, &a, 20.0), k_cross(2, 7, 1, 1, &b, 20.0));
    }

    #[test]
    fn cross_group_delay_shift() {
        let k = kern(100.0, 0.0, vec![0.0, 40.0]);
        // Group 2 lags group 1 by two samples.
        assert_relative_eq!(k_cross(3, 5, 0, 1, &k, 20.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn k_single_entry_and_symmetry() {
        let k = kern(100.0, 1e-3, vec![0.0, 80.0]);
        assert_eq!(build_K(&k, 1, 1, 20.0), DMatrix::from_element(1, 1, 1.0));
        let full = build_K(&k, 2, 25, 20.0);
        assert_eq!(full, full.transpose());
        assert!(full.clone().cholesky().is_some());
        // Diagonal blocks are identical Toeplitz matrices.
        for a in 0..25 {
            for b in 0..25 {
                assert_eq!(full[(a, b)], full[(25 + a, 25 + b)]);
            }
        }
    }

    #[test]
    fn kw_reduces_to_k_on_sample_grid() {
        let k = kern(60.0, 1e-3, vec![0.0]);
        let grid = InducingGrid::uniform(12, 12).unwrap();
        assert_eq!(build_Kw(&k, &grid, 20.0), build_K(&k, 1, 12, 20.0));
        assert_eq!(build_Kxw(&k, 1, 12, &grid, 20.0), build_K(&k, 1, 12, 20.0));
        let single = InducingGrid::uniform(1, 5).unwrap();
        assert_eq!(build_Kw(&k, &single, 20.0), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn kw_decreases_with_separation() {
        let k = kern(60.0, 0.0, vec![0.0]);
        let grid = InducingGrid::uniform(8, 40).unwrap();
        let kw = build_Kw(&k, &grid, 20.0);
        for b in 1..7 {
            assert!(kw[(0, b + 1)] < kw[(0, b)]);
        }
    }

    #[test]
    fn inducing_grid_endpoints() {
        let g = InducingGrid::uniform(10, 25).unwrap();
        assert_eq!(g.xi[0], 1.0);
        assert_eq!(g.xi[9], 25.0);
        assert!(g.xi.windows(2).all(|w| w[1] > w[0]));
        assert!(InducingGrid::uniform(26, 25).is_err());
    }

    #[test]
    fn kxw_entries_in_unit_interval() {
        let k = kern(100.0, 1e-3, vec![0.0, 80.0]);
        let g = InducingGrid::uniform(10, 25).unwrap();
        let kxw = build_Kxw(&k, 2, 25, &g, 20.0);
        assert!(kxw.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn psd_values() {
        assert_relative_eq!(psd(0.0, 100.0, 0.0), (2.0 * PI).sqrt() * 100.0, epsilon = 1e-12);
        assert_relative_eq!(psd(0.0, 100.0, 0.0), 250.66282746310002, epsilon = 1e-9);
        assert_eq!(psd(0.013, 70.0, 1e-3), psd(-0.013, 70.0, 1e-3));
        assert_relative_eq!(psd(10.0, 70.0, 1e-3), 1e-3, epsilon = 1e-15);
    }

    #[test]
    fn csd_properties() {
        let c = csd(0.01, 50.0, 1e-3, 12.0, 12.0);
        assert_relative_eq!(c.re, psd(0.01, 50.0, 1e-3), epsilon = 1e-12);
        assert!(c.im.abs() < 1e-12);
        let z = csd(0.0, 50.0, 1e-3, 12.0, -23.0);
        assert_relative_eq!(z.re, psd(0.0, 50.0, 1e-3), epsilon = 1e-12);
        let w = csd(0.004, 50.0, 0.0, 12.0, -23.0);
        assert_relative_eq!(w.arg(), -2.0 * PI * 0.004 * 35.0, epsilon = 1e-12);
        assert!(w.norm() <= psd(0.004, 50.0, 0.0) * (1.0 + 1e-15));
    }

    #[test]
    fn phase_examples() {
        assert!(phase_matrix(&[3.0, -7.0], 0.0).iter().all(|h| (*h - 1.0).norm() < 1e-15));
        assert!(phase_matrix(&[0.0, 0.0], 0.02).iter().all(|h| (*h - 1.0).norm() < 1e-15));
        let h = phase_factor(1.0 / (25.0 * 20.0), 10.0);
        assert_relative_eq!(h.arg(), -0.12566370614359174, epsilon = 1e-14);
        assert_relative_eq!(h.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn psd_gamma_derivative_matches_difference() {
        let (f, g, s2, d) = (0.004, 1.0 / 70.0f64.powi(2), 1e-3, 20.0);
        let h = g * 1e-6;
        let num = (discrete_psd(f, (g + h).powf(-0.5), s2, d) - discrete_psd(f, (g - h).powf(-0.5), s2, d)) / (2.0 * h);
        assert_relative_eq!(discrete_psd_dgamma(f, g, s2, d), num, max_relative = 1e-6);
    }

    #[test]
    fn circulant_blocks_are_circulant() {
        let k = kern(100.0, 1e-3, vec![0.0, 30.0]);
        let c = circulant_approx(&k, 2, 16, 20.0).unwrap();
        for (bm, bn) in [(0, 0), (0, 16), (16, 0), (16, 16)] {
            for i in 0..16 {
                for j in 0..16 {
                    let a = c[(bm + i, bn + j)];
                    let b = c[(bm + (i + 1) % 16, bn + (j + 1) % 16)];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
