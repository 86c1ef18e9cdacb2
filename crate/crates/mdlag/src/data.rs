//! Multi-group time-series datasets.

use nalgebra::DMatrix;

use crate::error::{MdlagError, Result};

/// `N` trials of `q = Σ_m q_m` units observed at `T` samples spaced `δ` ms.
///
/// Each trial is a `q × T` matrix whose rows are ordered group by group.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Samples per trial.
    pub t: usize,
    /// Sampling period in ms.
    pub delta: f64,
    /// Units per group.
    pub groups: Vec<usize>,
    /// One `q × T` matrix per trial.
    pub trials: Vec<DMatrix<f64>>,
    /// Optional label for every unit.
    pub unit_labels: Option<Vec<String>>,
    /// Free-form description of where the data came from.
    pub provenance: Option<String>,
    /// Seed used to generate the data, when synthetic.
    pub seed: Option<u64>,
}

impl Dataset {
    /// Builds a dataset and checks that every trial has the declared shape.
    pub fn new(t: usize, delta: f64, groups: Vec<usize>, trials: Vec<DMatrix<f64>>) -> Result<Self> {
        let ds = Self { t, delta, groups, trials, unit_labels: None, provenance: None, seed: None };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks dimensions, sampling period and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.groups.is_empty() || self.groups.contains(&0) {
            return Err(MdlagError::Dimension("T and every group size must be positive".into()));
        }
        if self.trials.is_empty() {
            return Err(MdlagError::Dimension("dataset has no trials".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(MdlagError::Config(format!("sampling period must be positive, got {}", self.delta)));
        }
        let q = self.q();
        for (n, y) in self.trials.iter().enumerate() {
            if y.nrows() != q || y.ncols() != self.t {
                return Err(MdlagError::Dimension(format!(
                    "trial {n} is {}x{}, expected {q}x{}",
                    y.nrows(),
                    y.ncols(),
                    self.t
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(MdlagError::NonFinite(format!("observation in trial {n}")));
            }
        }
        if let Some(labels) = &self.unit_labels {
            if labels.len() != q {
                return Err(MdlagError::Dimension(format!("{} unit labels for {q} units", labels.len())));
            }
        }
        Ok(())
    }

    /// Number of trials.
    pub fn n(&self) -> usize {
        self.trials.len()
    }

    /// Number of groups.
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    /// Total number of units.
    pub fn q(&self) -> usize {
        self.groups.iter().sum()
    }

    /// Row offset of each group, plus the total as a final entry.
    pub fn offsets(&self) -> Vec<usize> {
        group_offsets(&self.groups)
    }

    /// Rows belonging to group `m`.
    pub fn group_rows(&self, m: usize) -> std::ops::Range<usize> {
        let o = self.offsets();
        o[m]..o[m + 1]
    }

    /// Per-unit mean and population variance over all trials and samples.
    pub fn unit_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let q = self.q();
        let count = (self.n() * self.t) as f64;
        let mut mean = vec![0.0; q];
        for y in &self.trials {
            for r in 0..q {
                mean[r] += y.row(r).sum();
            }
        }
        mean.iter_mut().for_each(|v| *v /= count);
        let mut var = vec![0.0; q];
        for y in &self.trials {
            for r in 0..q {
                var[r] += y.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        (mean, var)
    }

    /// Keeps the listed trials, in the given order.
    pub fn subset(&self, trials: &[usize]) -> Dataset {
        Dataset { trials: trials.iter().map(|&n| self.trials[n].clone()).collect(), ..self.clone() }
    }
}

/// Row offsets for the given group sizes, with the total appended.
pub fn group_offsets(groups: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(groups.len() + 1);
    let mut acc = 0;
    out.push(0);
    for g in groups {
        acc += g;
        out.push(acc);
    }
    out
}
