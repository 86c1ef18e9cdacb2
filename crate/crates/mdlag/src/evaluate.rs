//! Held-out predictive evaluation: leave-group-out and leave-unit-out
//! prediction through the three inference routes, and the R² metric.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{MdlagError, Result};
use crate::fit::frequency::{update_qx_freq_groups, SpectralDataset};
use crate::fit::inducing::{latent_means_from_w, update_qw_groups, InducingCaches};
use crate::fit::time::update_qx_time;
use crate::fit::Method;
use crate::kernels::InducingGrid;
use crate::state::{GroupPosterior, Model, RegressionPosterior};

/// Predictions for held-out units and the resulting R².
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    /// Route used for latent inference.
    pub route: Method,
    /// Rows of the dataset that were predicted.
    pub units: Vec<usize>,
    /// Predicted activity of those rows, one `|units| × T` matrix per trial.
    pub predicted: Vec<DMatrix<f64>>,
    /// R² over trials and retained samples.
    pub r2: f64,
    /// Samples dropped at each end of every trial before scoring.
    pub edge_trim: usize,
}

fn check_lgo(model: &Model, data: &Dataset, held_out: usize) -> Result<()> {
    model.check_dataset(data)?;
    if model.m() < 2 {
        return Err(MdlagError::Config("leave-group-out prediction needs at least two groups".into()));
    }
    if held_out >= model.m() {
        return Err(MdlagError::Config(format!("held-out group {held_out} out of range")));
    }
    Ok(())
}

/// `⟨C^m⟩ x + ⟨d^m⟩` for latents `x` (`p × T`).
fn observe_mean(model: &Model, g: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
    let gp = &model.reg.groups[g];
    let mut y = &gp.mu_c * x;
    for mut col in y.column_iter_mut() {
        col += &gp.mu_d;
    }
    y
}

fn actual_rows(data: &Dataset, rows: &std::ops::Range<usize>) -> Vec<DMatrix<f64>> {
    data.trials.iter().map(|y| y.rows(rows.start, rows.len()).into_owned()).collect()
}

fn lgo_report(route: Method, data: &Dataset, held_out: usize, predicted: Vec<DMatrix<f64>>) -> Result<PredictionReport> {
    let rows = data.group_rows(held_out);
    let actual = actual_rows(data, &rows);
    let r2 = r2_lgo(&actual, &predicted, &unit_means(&actual, 0), 0)?;
    Ok(PredictionReport { route, units: rows.collect(), predicted, r2, edge_trim: 0 })
}

/// Model whose group `held_out` contributes nothing to latent inference.
fn silence_group(model: &Model, held_out: usize) -> Model {
    let mut out = model.clone();
    let g = &mut out.reg.groups[held_out];
    g.mu_c.fill(0.0);
    g.sigma_c.iter_mut().for_each(|s| s.fill(0.0));
    out
}

/// Leave-group-out prediction with exact time-domain inference: latents
/// are inferred from every other group under the joint prior and mapped to
/// group `held_out`.
pub fn predict_lgo_time(model: &Model, data: &Dataset, held_out: usize) -> Result<PredictionReport> {
    check_lgo(model, data, held_out)?;
    let post = update_qx_time(&silence_group(model, held_out), data)?;
    let predicted = (0..data.n())
        .map(|n| observe_mean(model, held_out, &post.group_means(n, held_out)))
        .collect();
    lgo_report(Method::Time, data, held_out, predicted)
}

/// Leave-group-out prediction through inducing variables on `t_ind`
/// uniformly spaced points.
pub fn predict_lgo_inducing(model: &Model, data: &Dataset, held_out: usize, t_ind: usize) -> Result<PredictionReport> {
    check_lgo(model, data, held_out)?;
    let grid = InducingGrid::uniform(t_ind, data.t)?;
    let caches = InducingCaches::new(&model.gp, model.m(), data.t, &grid, data.delta)?;
    let others: Vec<usize> = (0..model.m()).filter(|&g| g != held_out).collect();
    let post = update_qw_groups(model, data, &grid, &caches, &others)?;
    let predicted = (0..data.n())
        .map(|n| observe_mean(model, held_out, &latent_means_from_w(&post, &caches, n, held_out)))
        .collect();
    lgo_report(Method::Inducing, data, held_out, predicted)
}

/// Leave-group-out prediction with per-frequency inference, transformed
/// back to the time domain.
pub fn predict_lgo_freq(model: &Model, data: &Dataset, held_out: usize) -> Result<PredictionReport> {
    check_lgo(model, data, held_out)?;
    let spec = SpectralDataset::new(data, false)?;
    let others: Vec<usize> = (0..model.m()).filter(|&g| g != held_out).collect();
    let post = update_qx_freq_groups(model, &spec, &others)?;
    let predicted = (0..data.n())
        .map(|n| post.group_means(n, held_out).map(|x| observe_mean(model, held_out, &x)))
        .collect::<Result<Vec<_>>>()?;
    lgo_report(Method::Frequency, data, held_out, predicted)
}

/// Leave-group-out prediction through `route` (`t_ind` is used by the
/// inducing route only and defaults to `T`).
pub fn predict_lgo(model: &Model, data: &Dataset, held_out: usize, route: Method, t_ind: Option<usize>) -> Result<PredictionReport> {
    match route {
        Method::Time => predict_lgo_time(model, data, held_out),
        Method::Inducing => predict_lgo_inducing(model, data, held_out, t_ind.unwrap_or(data.t)),
        Method::Frequency => predict_lgo_freq(model, data, held_out),
    }
}

/// Per-unit mean over trials and the retained samples.
pub fn unit_means(actual: &[DMatrix<f64>], edge_trim: usize) -> DVector<f64> {
    let rows = actual.first().map_or(0, |y| y.nrows());
    let t = actual.first().map_or(0, |y| y.ncols());
    let kept = t.saturating_sub(2 * edge_trim);
    let mut out = DVector::zeros(rows);
    for y in actual {
        for r in 0..rows {
            out[r] += y.row(r).columns(edge_trim, kept).sum();
        }
    }
    out / (actual.len() * kept).max(1) as f64
}

/// `1 − Σ‖y − ŷ‖² / Σ‖y − μ_y‖²` over trials and the samples that remain
/// after dropping `edge_trim` at each end.
pub fn r2_lgo(actual: &[DMatrix<f64>], predicted: &[DMatrix<f64>], means: &DVector<f64>, edge_trim: usize) -> Result<f64> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(MdlagError::Dimension("actual and predicted trial counts differ".into()));
    }
    let (rows, t) = actual[0].shape();
    if means.len() != rows || 2 * edge_trim >= t {
        return Err(MdlagError::Dimension("means or edge trim inconsistent with the data".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (y, yh) in actual.iter().zip(predicted) {
        if y.shape() != (rows, t) || yh.shape() != (rows, t) {
            return Err(MdlagError::Dimension("trial shapes differ".into()));
        }
        for s in edge_trim..t - edge_trim {
            for r in 0..rows {
                num += (y[(r, s)] - yh[(r, s)]).powi(2);
                den += (y[(r, s)] - means[r]).powi(2);
            }
        }
    }
    if den == 0.0 {
        return Err(MdlagError::DegenerateVariance { unit: 0 });
    }
    Ok(1.0 - num / den)
}

/// Default number of samples trimmed at each end for leave-unit-out
/// scoring: `⌈2 τ_max / δ⌉`, capped at `⌊T/5⌋`.
pub fn default_edge_trim(model: &Model, t: usize) -> usize {
    let tau_max = model.gp.tau.iter().copied().fold(0.0, f64::max);
    ((2.0 * tau_max / model.delta).ceil() as usize).min(t / 5)
}

/// The same model with every unit treated as its own group. Each unit
/// inherits the delays of its original group.
pub fn split_units(model: &Model) -> Model {
    let p = model.p();
    let mut groups = Vec::with_capacity(model.q());
    let mut delays = vec![Vec::with_capacity(model.q()); p];
    for (g, gp) in model.reg.groups.iter().enumerate() {
        for r in 0..gp.q() {
            groups.push(GroupPosterior {
                mu_d: DVector::from_element(1, gp.mu_d[r]),
                sigma_d: DVector::from_element(1, gp.sigma_d[r]),
                b_phi: DVector::from_element(1, gp.b_phi[r]),
                mu_c: gp.mu_c.rows(r, 1).into_owned(),
                sigma_c: vec![gp.sigma_c[r].clone()],
                a_alpha: gp.a_alpha,
                b_alpha: gp.b_alpha.clone(),
            });
            for (j, d) in delays.iter_mut().enumerate() {
                d.push(model.gp.delays[j][g] - model.gp.delays[j][0]);
            }
        }
    }
    let mut gp = model.gp.clone();
    gp.delays = delays;
    Model {
        groups: vec![1; model.q()],
        delta: model.delta,
        hyper: model.hyper,
        gp,
        reg: RegressionPosterior { a_phi: model.reg.a_phi, groups },
    }
}

/// Leave-unit-out prediction: every unit is predicted from all the others
/// through the frequency route, and scored after dropping `edge_trim`
/// samples at each end (default [`default_edge_trim`]).
pub fn leave_unit_out(model: &Model, data: &Dataset, edge_trim: Option<usize>) -> Result<PredictionReport> {
    model.check_dataset(data)?;
    let trim = edge_trim.unwrap_or_else(|| default_edge_trim(model, data.t));
    if 2 * trim >= data.t {
        return Err(MdlagError::Config(format!("edge trim {trim} leaves no samples of T = {}", data.t)));
    }
    let q = model.q();
    if q < 2 {
        return Err(MdlagError::Config("leave-unit-out prediction needs at least two units".into()));
    }
    let units = split_units(model);
    let unit_data = Dataset { groups: vec![1; q], unit_labels: None, ..data.clone() };
    let spec = SpectralDataset::new(&unit_data, false)?;
    let mut predicted = vec![DMatrix::zeros(q, data.t); data.n()];
    for r in 0..q {
        let others: Vec<usize> = (0..q).filter(|&g| g != r).collect();
        let post = update_qx_freq_groups(&units, &spec, &others)?;
        for (n, pred) in predicted.iter_mut().enumerate() {
            let y = observe_mean(&units, r, &post.group_means(n, r)?);
            pred.set_row(r, &y.row(0));
        }
    }
    let r2 = r2_lgo(&data.trials, &predicted, &unit_means(&data.trials, trim), trim)?;
    Ok(PredictionReport { route: Method::Frequency, units: (0..q).collect(), predicted, r2, edge_trim: trim })
}
