//! Numeric substrate: unitary DFT, frequency grids and positive-definite
//! inverses with log-determinants.
//!
//! The DFT contract is `x̃_l = (1/√T) Σ_t x_t exp(-i 2π (l-1)(t-1) / T)` in
//! the standard FFT bin order, so the transform matrix is unitary and its
//! inverse is the conjugate transpose.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{MdlagError, Result};

/// Relative jitter levels tried, in order, when a Cholesky factorization
/// fails. Each level is scaled by the mean absolute diagonal of the matrix.
pub const JITTER_LEVELS: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Matrices up to this order are factorized with nalgebra; larger ones go
/// through faer's blocked Cholesky.
const SMALL_ORDER: usize = 48;

/// Planned forward and inverse unitary transforms of a fixed length.
#[derive(Clone)]
pub struct UnitaryDft {
    len: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for UnitaryDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryDft").field("len", &self.len).finish()
    }
}

impl UnitaryDft {
    /// Plans transforms of length `len`.
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(MdlagError::Dimension("DFT length must be at least 1".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            scale: 1.0 / (len as f64).sqrt(),
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    /// Transform length.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: a planned transform has positive length.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Forward unitary transform of a real series.
    pub fn forward_real(&self, series: &[f64]) -> Result<Vec<Complex64>> {
        self.check(series.len())?;
        let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
        Ok(buf)
    }

    /// Forward unitary transform of a complex series.
    pub fn forward(&self, series: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(series.len())?;
        let mut buf = series.to_vec();
        self.forward.process(&mut buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
        Ok(buf)
    }

    /// Inverse unitary transform (conjugate transpose of the forward one).
    pub fn inverse(&self, spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(spectrum.len())?;
        let mut buf = spectrum.to_vec();
        self.inverse.process(&mut buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
        Ok(buf)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len {
            return Err(MdlagError::Dimension(format!(
                "series of length {len} passed to a DFT of length {}",
                self.len
            )));
        }
        Ok(())
    }
}

/// Unitary DFT of a real series.
pub fn unitary_dft(series: &[f64]) -> Result<Vec<Complex64>> {
    UnitaryDft::new(series.len())?.forward_real(series)
}

/// Inverse unitary DFT.
pub fn inverse_unitary_dft(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    UnitaryDft::new(spectrum.len())?.inverse(spectrum)
}

/// Frequencies (cycles/ms) of the DFT bins of a length-`T` series sampled
/// every `delta` ms.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    /// Series length.
    pub t: usize,
    /// Sampling period in ms.
    pub delta: f64,
    /// Frequency of each bin, in FFT order.
    pub f: Vec<f64>,
}

impl FrequencyGrid {
    /// Number of bins `0..=⌊T/2⌋` that determine a conjugate-symmetric
    /// spectrum.
    pub fn half_len(&self) -> usize {
        self.t / 2 + 1
    }

    /// Multiplicity of bin `l` (zero-based, `l < half_len`) when a sum over
    /// all bins of a conjugate-symmetric quantity is folded onto the half
    /// spectrum: 1 for the zero and Nyquist bins, 2 otherwise.
    pub fn fold_weight(&self, l: usize) -> f64 {
        if l == 0 || (self.t.is_multiple_of(2) && l == self.t / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Bin index paired with `l` under conjugate symmetry.
    pub fn mirror(&self, l: usize) -> usize {
        (self.t - l) % self.t
    }
}

/// Builds the frequency grid: `f_l = (l-1)/(T δ)` for `l-1 ≤ ⌊T/2⌋`,
/// otherwise `(l-1-T)/(T δ)`.
pub fn frequency_grid(t: usize, delta: f64) -> Result<FrequencyGrid> {
    if t == 0 {
        return Err(MdlagError::Dimension("frequency grid needs T ≥ 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(MdlagError::Config(format!("sampling period must be positive, got {delta}")));
    }
    let span = t as f64 * delta;
    let f = (0..t)
        .map(|k| {
            if k <= t / 2 {
                k as f64 / span
            } else {
                (k as f64 - t as f64) / span
            }
        })
        .collect();
    Ok(FrequencyGrid { t, delta, f })
}

/// Inverse and log-determinant of a symmetric positive-definite matrix.
/// Fails with [`MdlagError::NotPositiveDefinite`] if the Cholesky
/// factorization breaks down; no jitter is applied.
pub fn spd_inverse_logdet(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    check_square(a)?;
    spd_attempt(a).ok_or(MdlagError::NotPositiveDefinite { size: a.nrows() })
}

/// Like [`spd_inverse_logdet`], but on failure retries with `A + εI` for
/// each level of [`JITTER_LEVELS`] scaled by the mean absolute diagonal.
/// Returns the inverse, the log-determinant of the (possibly jittered)
/// matrix, and the jitter that was added.
pub fn spd_inverse_logdet_jitter(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, f64)> {
    check_square(a)?;
    if let Some((inv, ld)) = spd_attempt(a) {
        return Ok((inv, ld, 0.0));
    }
    let scale = mean_abs_diag(a.diagonal().iter().copied());
    for level in JITTER_LEVELS {
        let eps = level * scale;
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += eps;
        }
        if let Some((inv, ld)) = spd_attempt(&b) {
            return Ok((inv, ld, eps));
        }
    }
    Err(MdlagError::NotPositiveDefinite { size: a.nrows() })
}

/// Lower Cholesky factor with the same jitter policy as
/// [`spd_inverse_logdet_jitter`].
pub fn spd_cholesky_jitter(a: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    check_square(a)?;
    if let Some(c) = a.clone().cholesky() {
        return Ok(c);
    }
    let scale = mean_abs_diag(a.diagonal().iter().copied());
    for level in JITTER_LEVELS {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += level * scale;
        }
        if let Some(c) = b.cholesky() {
            return Ok(c);
        }
    }
    Err(MdlagError::NotPositiveDefinite { size: a.nrows() })
}

/// Inverse and log-determinant of a Hermitian positive-definite complex
/// matrix, with the same jitter policy as [`spd_inverse_logdet_jitter`].
pub fn hpd_inverse_logdet_jitter(a: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, f64)> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(MdlagError::Dimension("Hermitian inverse needs a non-empty square matrix".into()));
    }
    let attempt = |m: DMatrix<Complex64>| {
        m.cholesky().map(|c| {
            let ld = 2.0 * c.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
            (c.inverse(), ld)
        })
    };
    if let Some(out) = attempt(a.clone()) {
        return Ok(out);
    }
    let scale = mean_abs_diag(a.diagonal().iter().map(|z| z.re));
    for level in JITTER_LEVELS {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += Complex64::new(level * scale, 0.0);
        }
        if let Some(out) = attempt(b) {
            return Ok(out);
        }
    }
    Err(MdlagError::NotPositiveDefinite { size: a.nrows() })
}

/// Log-determinant of a symmetric positive-definite matrix (jitter policy
/// applied).
pub fn spd_logdet_jitter(a: &DMatrix<f64>) -> Result<f64> {
    let c = spd_cholesky_jitter(a)?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Replaces `a` by `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Replaces `a` by `(a + aᴴ)/2`.
pub fn hermitize(a: &mut DMatrix<Complex64>) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(MdlagError::Dimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MdlagError::NonFinite("matrix passed to a Cholesky factorization".into()));
    }
    Ok(())
}

fn mean_abs_diag(diag: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = diag.fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
    let mean = sum / n.max(1) as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Entries smaller than this fraction of the largest diagonal magnitude are
/// set to zero before and after a factorization, which keeps subnormal
/// numbers out of the `O(n³)` kernels.
pub const NEGLIGIBLE: f64 = 1e-100;

/// Zeroes every entry of `a` below [`NEGLIGIBLE`] times its largest diagonal
/// magnitude.
pub fn flush_negligible(a: &mut DMatrix<f64>) {
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = NEGLIGIBLE * scale;
    a.iter_mut().filter(|v| v.abs() < floor).for_each(|v| *v = 0.0);
}

fn spd_attempt(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let mut a = a.clone();
    flush_negligible(&mut a);
    let n = a.nrows();
    if n <= SMALL_ORDER {
        let c = a.clone().cholesky()?;
        let ld = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut inv = c.inverse();
        symmetrize(&mut inv);
        flush_negligible(&mut inv);
        return Some((inv, ld));
    }
    use faer::linalg::solvers::DenseSolveCore;
    let view = faer::MatRef::from_column_major_slice(a.as_slice(), n, n);
    let llt = view.llt(faer::Side::Lower).ok()?;
    let l = llt.L();
    let ld = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let inv = llt.inverse();
    let mut out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)]);
    symmetrize(&mut out);
    flush_negligible(&mut out);
    Some((out, ld))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_series_concentrates_at_zero_frequency() {
        let v = unitary_dft(&[2.0; 9]).unwrap();
        assert_relative_eq!(v[0].re, 3.0 * 2.0, epsilon = 1e-12);
        for z in &v[1..] {
            assert!(z.norm() < 1e-12);
        }
    }

    #[test]
    fn four_point_impulse_is_flat() {
        let v = unitary_dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for z in v {
            assert_relative_eq!(z.re, 0.5, epsilon = 1e-15);
            assert!(z.im.abs() < 1e-15);
        }
    }

    #[test]
    fn empty_series_is_rejected() {
        assert!(unitary_dft(&[]).is_err());
    }

    #[test]
    fn grid_even_and_odd() {
        assert_eq!(frequency_grid(4, 1.0).unwrap().f, vec![0.0, 0.25, 0.5, -0.25]);
        let g = frequency_grid(5, 1.0).unwrap();
        let want = [0.0, 0.2, 0.4, -0.4, -0.2];
        for (a, b) in g.f.iter().zip(want) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(frequency_grid(5, 1.0).unwrap().half_len(), 3);
        assert_eq!(frequency_grid(4, 1.0).unwrap().fold_weight(2), 1.0);
        assert_eq!(frequency_grid(5, 1.0).unwrap().fold_weight(2), 2.0);
    }

    #[test]
    fn nyquist_bin_for_even_length() {
        let g = frequency_grid(100, 20.0).unwrap();
        assert_relative_eq!(g.f[50], 1.0 / 40.0, epsilon = 1e-15);
    }

    #[test]
    fn spd_examples() {
        let (inv, ld) = spd_inverse_logdet(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(inv, DMatrix::identity(3, 3));
        assert_eq!(ld, 0.0);
        let (inv, ld) = spd_inverse_logdet(&DMatrix::from_diagonal_element(2, 2, 2.0)).unwrap();
        assert_relative_eq!(inv[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(ld, 2.0 * 2f64.ln(), epsilon = 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (_, ld) = spd_inverse_logdet(&a).unwrap();
        assert_relative_eq!(ld, 3f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn large_spd_goes_through_blocked_path() {
        let n = 80;
        let b = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let a = &b * b.transpose() + DMatrix::identity(n, n);
        let (inv, ld) = spd_inverse_logdet(&a).unwrap();
        let err = (&a * &inv - DMatrix::identity(n, n)).abs().max();
        assert!(err < 1e-8, "{err}");
        let naive = a.clone().lu().determinant().ln();
        assert_relative_eq!(ld, naive, max_relative = 1e-10);
    }

    #[test]
    fn singular_matrix_needs_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        assert!(spd_inverse_logdet(&a).is_err());
        let (_, ld, eps) = spd_inverse_logdet_jitter(&a).unwrap();
        assert!(eps > 0.0 && ld.is_finite());
        let neg = DMatrix::from_diagonal_element(2, 2, -1.0);
        assert!(matches!(
            spd_inverse_logdet_jitter(&neg),
            Err(MdlagError::NotPositiveDefinite { size: 2 })
        ));
    }

    #[test]
    fn hermitian_inverse() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.5),
                Complex64::new(0.5, -0.5),
                Complex64::new(3.0, 0.0),
            ],
        );
        let (inv, ld) = hpd_inverse_logdet_jitter(&a).unwrap();
        let err = (&a * &inv - DMatrix::identity(2, 2)).map(|z| z.norm()).max();
        assert!(err < 1e-12);
        assert_relative_eq!(ld, (6.0f64 - 0.5).ln(), epsilon = 1e-12);
    }
}
