//! Dataset and model checkpoint files.
//!
//! Both formats are a JSON manifest next to a binary payload of
//! little-endian 64-bit floats. For a manifest `name.json` the payload is
//! `name.bin` in the same directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MdlagError, Result};
use crate::fit::Method;
use crate::state::{GpParams, GroupPosterior, Hyperparams, Model, RegressionPosterior};

/// Version written to every manifest.
pub const FORMAT_VERSION: u32 = 1;

/// Payload path belonging to a manifest path.
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(MdlagError::Format(format!("payload length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect())
}

/// Manifest of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub delta_ms: f64,
    pub groups: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// File name of the payload, relative to the manifest.
    pub payload: String,
}

/// Writes `data` as `manifest` plus its payload. Trials are stored one
/// after another, each as its `q × T` matrix in row-major order (rows
/// ordered group by group).
pub fn write_dataset(data: &Dataset, manifest: &Path) -> Result<()> {
    data.validate()?;
    let payload = payload_path(manifest);
    let man = DatasetManifest {
        format_version: FORMAT_VERSION,
        n: data.n(),
        t: data.t,
        delta_ms: data.delta,
        groups: data.groups.clone(),
        unit_labels: data.unit_labels.clone(),
        provenance: data.provenance.clone(),
        seed: data.seed,
        payload: file_name(&payload),
    };
    let mut values = Vec::with_capacity(data.n() * data.q() * data.t);
    for y in &data.trials {
        for r in 0..y.nrows() {
            values.extend(y.row(r).iter());
        }
    }
    fs::write(&payload, encode(&values))?;
    fs::write(manifest, serde_json::to_vec_pretty(&man)?)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(manifest: &Path) -> Result<Dataset> {
    let man: DatasetManifest = serde_json::from_slice(&fs::read(manifest)?)?;
    if man.format_version != FORMAT_VERSION {
        return Err(MdlagError::Format(format!("unsupported dataset format version {}", man.format_version)));
    }
    let payload = manifest.with_file_name(&man.payload);
    let values = decode(&fs::read(payload)?)?;
    let q: usize = man.groups.iter().sum();
    let per_trial = q * man.t;
    if values.len() != man.n * per_trial {
        return Err(MdlagError::Format(format!(
            "payload holds {} values, manifest implies {}",
            values.len(),
            man.n * per_trial
        )));
    }
    let trials = values
        .chunks_exact(per_trial.max(1))
        .take(man.n)
        .map(|c| DMatrix::from_row_slice(q, man.t, c))
        .collect();
    let mut ds = Dataset::new(man.t, man.delta_ms, man.groups, trials)?;
    ds.unit_labels = man.unit_labels;
    ds.provenance = man.provenance;
    ds.seed = man.seed;
    ds.validate()?;
    Ok(ds)
}

/// Location and shape of one array inside a checkpoint payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values (not bytes) from the start of the payload.
    pub offset: usize,
}

/// Manifest of a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub groups: Vec<usize>,
    pub p: usize,
    pub delta_ms: f64,
    pub hyper: Hyperparams,
    pub gp: GpParams,
    pub a_phi: f64,
    pub a_alpha: Vec<f64>,
    pub iterations: usize,
    pub elbo: Vec<f64>,
    pub payload: String,
    pub blobs: Vec<BlobEntry>,
}

/// A model together with the fitting history it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub method: Option<Method>,
    pub iterations: usize,
    pub elbo: Vec<f64>,
}

struct BlobWriter {
    values: Vec<f64>,
    index: Vec<BlobEntry>,
}

impl BlobWriter {
    fn push(&mut self, name: String, shape: Vec<usize>, data: impl IntoIterator<Item = f64>) {
        let offset = self.values.len();
        self.values.extend(data);
        self.index.push(BlobEntry { name, shape, offset });
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

/// Writes a checkpoint as `manifest` plus its payload.
pub fn write_checkpoint(cp: &Checkpoint, manifest: &Path) -> Result<()> {
    let model = &cp.model;
    model.validate()?;
    let p = model.p();
    let mut w = BlobWriter { values: Vec::new(), index: Vec::new() };
    for (g, gp) in model.reg.groups.iter().enumerate() {
        let q = gp.q();
        w.push(format!("group{g}.mu_d"), vec![q], gp.mu_d.iter().copied());
        w.push(format!("group{g}.sigma_d"), vec![q], gp.sigma_d.iter().copied());
        w.push(format!("group{g}.b_phi"), vec![q], gp.b_phi.iter().copied());
        w.push(format!("group{g}.mu_c"), vec![q, p], row_major(&gp.mu_c));
        w.push(format!("group{g}.sigma_c"), vec![q, p, p], gp.sigma_c.iter().flat_map(row_major));
        w.push(format!("group{g}.b_alpha"), vec![p], gp.b_alpha.iter().copied());
    }
    let payload = payload_path(manifest);
    let man = CheckpointManifest {
        format_version: FORMAT_VERSION,
        method: cp.method,
        groups: model.groups.clone(),
        p,
        delta_ms: model.delta,
        hyper: model.hyper,
        gp: model.gp.clone(),
        a_phi: model.reg.a_phi,
        a_alpha: model.reg.groups.iter().map(|g| g.a_alpha).collect(),
        iterations: cp.iterations,
        elbo: cp.elbo.clone(),
        payload: file_name(&payload),
        blobs: w.index,
    };
    fs::write(&payload, encode(&w.values))?;
    fs::write(manifest, serde_json::to_vec_pretty(&man)?)?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(manifest: &Path) -> Result<Checkpoint> {
    let man: CheckpointManifest = serde_json::from_slice(&fs::read(manifest)?)?;
    if man.format_version != FORMAT_VERSION {
        return Err(MdlagError::Format(format!("unsupported checkpoint format version {}", man.format_version)));
    }
    let values = decode(&fs::read(manifest.with_file_name(&man.payload))?)?;
    let blob = |name: &str, shape: &[usize]| -> Result<&[f64]> {
        let entry = man
            .blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| MdlagError::Format(format!("checkpoint lacks blob {name}")))?;
        if entry.shape != shape {
            return Err(MdlagError::Format(format!("blob {name} has shape {:?}, expected {shape:?}", entry.shape)));
        }
        let len: usize = shape.iter().product();
        values
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| MdlagError::Format(format!("blob {name} runs past the payload")))
    };
    let p = man.p;
    if man.a_alpha.len() != man.groups.len() {
        return Err(MdlagError::Format("one ARD shape per group expected".into()));
    }
    let mut groups = Vec::with_capacity(man.groups.len());
    for (g, &q) in man.groups.iter().enumerate() {
        let sigma_c = blob(&format!("group{g}.sigma_c"), &[q, p, p])?;
        groups.push(GroupPosterior {
            mu_d: DVector::from_column_slice(blob(&format!("group{g}.mu_d"), &[q])?),
            sigma_d: DVector::from_column_slice(blob(&format!("group{g}.sigma_d"), &[q])?),
            b_phi: DVector::from_column_slice(blob(&format!("group{g}.b_phi"), &[q])?),
            mu_c: DMatrix::from_row_slice(q, p, blob(&format!("group{g}.mu_c"), &[q, p])?),
            sigma_c: sigma_c.chunks_exact((p * p).max(1)).take(q).map(|c| DMatrix::from_row_slice(p, p, c)).collect(),
            a_alpha: man.a_alpha[g],
            b_alpha: DVector::from_column_slice(blob(&format!("group{g}.b_alpha"), &[p])?),
        });
    }
    let model = Model {
        groups: man.groups.clone(),
        delta: man.delta_ms,
        hyper: man.hyper,
        gp: man.gp.clone(),
        reg: RegressionPosterior { a_phi: man.a_phi, groups },
    };
    model.validate()?;
    Ok(Checkpoint { model, method: man.method, iterations: man.iterations, elbo: man.elbo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::initialize;

    fn toy() -> Dataset {
        let trials = (0..3)
            .map(|n| DMatrix::from_fn(3, 5, |r, s| (n * 100 + r * 10 + s) as f64 * 0.1 + 1.0 / 3.0))
            .collect();
        let mut ds = Dataset::new(5, 20.0, vec![1, 2], trials).unwrap();
        ds.seed = Some(7);
        ds
    }

    #[test]
    fn dataset_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        let ds = toy();
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
        let bytes = fs::read(payload_path(&path)).unwrap();
        assert_eq!(bytes.len(), 8 * 3 * 3 * 5);
        // Second value of the payload is trial 0, unit 0, sample 1.
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), ds.trials[0][(0, 1)]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        write_dataset(&toy(), &path).unwrap();
        let bytes = fs::read(payload_path(&path)).unwrap();
        fs::write(payload_path(&path), &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_dataset(&path), Err(MdlagError::Format(_))));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = initialize(&toy(), 2, 3, &Hyperparams::default()).unwrap();
        let cp = Checkpoint { model, method: Some(Method::Frequency), iterations: 4, elbo: vec![-1.0 / 3.0, -0.25] };
        write_checkpoint(&cp, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), cp);
    }
}
