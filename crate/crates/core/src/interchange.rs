// SPDX-License-Identifier: Apache-2.0

//! On-disk dataset container.
//!
//! A dataset is a JSON manifest next to a set of binary tensor files. Each
//! tensor file is laid out as
//!
//! ```text
//! offset  size        field
//! 0       8           magic "OODTNSR1"
//! 8       1           dtype code (0 = f32, 1 = f64, 2 = i32)
//! 9       1           rank (1 or 2)
//! 10      8 * rank    dims, u64 little-endian
//! ...     prod(dims) * sizeof(dtype)   payload, row-major, little-endian
//! ```
//!
//! Manifest paths are resolved relative to the manifest's directory. Float
//! tensors are widened to `f64` on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::linalg::DenseMatrix;

pub const TENSOR_MAGIC: &[u8; 8] = b"OODTNSR1";

/// Largest CSV fixture accepted, counted in cells across every file.
pub const CSV_MAX_CELLS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    I32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::I32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::I32),
            other => Err(OodError::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Payload in its stored precision, so a read/write cycle reproduces the
/// original bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::I32(_) => Dtype::I32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(OodError::MalformedHeader(format!(
                "rank {} (expected 1 or 2)",
                shape.len()
            )));
        }
        let count = element_count(&shape)?;
        if count != data.len() {
            return Err(OodError::SizeMismatch {
                expected: count * data.dtype().size(),
                actual: data.len() * data.dtype().size(),
            });
        }
        Ok(TensorFile { shape, data })
    }

    pub fn from_matrix(m: &DenseMatrix) -> Self {
        TensorFile {
            shape: vec![m.rows(), m.cols()],
            data: TensorData::F64(m.as_slice().to_vec()),
        }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        TensorFile {
            shape: vec![values.len()],
            data: TensorData::F64(values.to_vec()),
        }
    }

    pub fn from_i32(values: Vec<i32>) -> Self {
        TensorFile {
            shape: vec![values.len()],
            data: TensorData::I32(values),
        }
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I32(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn to_matrix(&self, name: &str) -> Result<DenseMatrix> {
        if self.shape.len() != 2 {
            return Err(shape_err(name, "rank 2", &self.shape));
        }
        if self.dtype() == Dtype::I32 {
            return Err(OodError::Manifest(format!("{name} must be a float tensor")));
        }
        DenseMatrix::from_vec(self.shape[0], self.shape[1], self.to_f64())
            .map_err(|_| OodError::NonFinite(name.to_string()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.shape.len() + self.data.len() * 8);
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for &dim in &self.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(OodError::MalformedHeader(format!(
                "{} bytes is shorter than the fixed header",
                bytes.len()
            )));
        }
        if &bytes[..8] != TENSOR_MAGIC {
            return Err(OodError::MalformedHeader("bad magic".into()));
        }
        let dtype = Dtype::from_code(bytes[8])?;
        let rank = bytes[9] as usize;
        if rank == 0 || rank > 2 {
            return Err(OodError::MalformedHeader(format!(
                "rank {rank} (expected 1 or 2)"
            )));
        }
        let header_len = 10 + 8 * rank;
        if bytes.len() < header_len {
            return Err(OodError::MalformedHeader("truncated dims".into()));
        }
        let shape: Vec<usize> = bytes[10..header_len]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .map(|d| {
                usize::try_from(d)
                    .map_err(|_| OodError::MalformedHeader(format!("dim {d} too large")))
            })
            .collect::<Result<_>>()?;
        let count = element_count(&shape)?;
        let payload = &bytes[header_len..];
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| OodError::MalformedHeader("payload size overflows".into()))?;
        if payload.len() != expected {
            return Err(OodError::SizeMismatch {
                expected,
                actual: payload.len(),
            });
        }
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
            Dtype::I32 => TensorData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            ),
        };
        Ok(TensorFile { shape, data })
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| OodError::MalformedHeader("element count overflows".into()))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| OodError::io(path, e))?;
    TensorFile::decode(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &TensorFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|e| OodError::io(path, e))
}

/// Penultimate-layer activations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DenseMatrix);

impl FeatureMatrix {
    pub fn new(m: DenseMatrix) -> Self {
        FeatureMatrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        DenseMatrix::from_rows(rows).map(FeatureMatrix)
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }
}

/// Linear classifier head: `logits = W · feature + B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weights: DenseMatrix,
    bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(OodError::InvalidConfig(format!(
                "classifier head needs at least 2 classes, got {}",
                weights.rows()
            )));
        }
        if bias.len() != weights.rows() {
            return Err(OodError::ShapeMismatch {
                tensor: "bias".into(),
                expected: format!("[{}]", weights.rows()),
                actual: format!("[{}]", bias.len()),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(OodError::NonFinite("bias".into()));
        }
        Ok(ClassifierHead { weights, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitEntry {
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HeadEntry {
    pub weights: PathBuf,
    pub bias: PathBuf,
}

/// JSON manifest describing a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub head: HeadEntry,
    pub splits: BTreeMap<String, SplitEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub head: ClassifierHead,
    pub splits: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .get(name)
            .ok_or_else(|| OodError::MissingSplit(name.to_string()))
    }
}

fn shape_err(tensor: &str, expected: &str, actual: &[usize]) -> OodError {
    OodError::ShapeMismatch {
        tensor: tensor.to_string(),
        expected: expected.to_string(),
        actual: format!("{actual:?}"),
    }
}

/// Loads and validates every tensor a manifest references. Nothing is
/// returned unless the whole dataset checks out.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| OodError::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| OodError::Manifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let (d, c) = (manifest.feature_dim, manifest.num_classes);
    if d == 0 || c == 0 {
        return Err(OodError::Manifest(
            "feature_dim and num_classes must be positive".into(),
        ));
    }

    let weights = read_tensor(base.join(&manifest.head.weights))?;
    if weights.shape != [c, d] {
        return Err(shape_err(
            "head.weights",
            &format!("[{c}, {d}]"),
            &weights.shape,
        ));
    }
    let bias = read_tensor(base.join(&manifest.head.bias))?;
    if bias.shape != [c] {
        return Err(shape_err("head.bias", &format!("[{c}]"), &bias.shape));
    }
    if bias.dtype() == Dtype::I32 {
        return Err(OodError::Manifest(
            "head.bias must be a float tensor".into(),
        ));
    }
    let head = ClassifierHead::new(weights.to_matrix("head.weights")?, bias.to_f64())?;

    let mut splits = BTreeMap::new();
    for (name, entry) in &manifest.splits {
        let tensor_name = format!("splits.{name}.features");
        let feats = read_tensor(base.join(&entry.features))?;
        if feats.shape.len() != 2 || feats.shape[1] != d || feats.shape[0] == 0 {
            return Err(shape_err(
                &tensor_name,
                &format!("[N >= 1, {d}]"),
                &feats.shape,
            ));
        }
        let features = FeatureMatrix::new(feats.to_matrix(&tensor_name)?);
        let labels = match &entry.labels {
            None => None,
            Some(path) => {
                let label_name = format!("splits.{name}.labels");
                let t = read_tensor(base.join(path))?;
                if t.shape != [features.rows()] {
                    return Err(shape_err(
                        &label_name,
                        &format!("[{}]", features.rows()),
                        &t.shape,
                    ));
                }
                let TensorData::I32(raw) = t.data else {
                    return Err(OodError::Manifest(format!("{label_name} must be i32")));
                };
                Some(validate_labels(
                    &label_name,
                    raw.iter().map(|&v| i64::from(v)),
                    c,
                )?)
            }
        };
        splits.insert(name.clone(), Split { features, labels });
    }
    Ok(Dataset { head, splits })
}

fn validate_labels(
    name: &str,
    values: impl Iterator<Item = i64>,
    classes: usize,
) -> Result<Vec<usize>> {
    values
        .map(|v| {
            if v < 0 || v >= classes as i64 {
                Err(OodError::LabelOutOfRange {
                    tensor: name.to_string(),
                    value: v,
                    classes,
                })
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

/// Writes `dataset` as `dir/manifest.json` plus one f64 tensor file per
/// array (labels as i32). Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| OodError::io(dir, e))?;
    write_tensor(
        dir.join("head_weights.bin"),
        &TensorFile::from_matrix(dataset.head.weights()),
    )?;
    write_tensor(
        dir.join("head_bias.bin"),
        &TensorFile::from_f64(dataset.head.bias()),
    )?;
    let mut splits = BTreeMap::new();
    for (name, split) in &dataset.splits {
        let features = PathBuf::from(format!("{name}_features.bin"));
        write_tensor(
            dir.join(&features),
            &TensorFile::from_matrix(split.features.matrix()),
        )?;
        let labels = match &split.labels {
            Some(l) => {
                let path = PathBuf::from(format!("{name}_labels.bin"));
                let values = l.iter().map(|&v| v as i32).collect();
                write_tensor(dir.join(&path), &TensorFile::from_i32(values))?;
                Some(path)
            }
            None => None,
        };
        splits.insert(name.clone(), SplitEntry { features, labels });
    }
    let manifest = DatasetManifest {
        feature_dim: dataset.head.feature_dim(),
        num_classes: dataset.head.num_classes(),
        head: HeadEntry {
            weights: "head_weights.bin".into(),
            bias: "head_bias.bin".into(),
        },
        splits,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| OodError::io(&path, e))?;
    Ok(path)
}

fn read_csv_rows(path: &Path, budget: &mut usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                OodError::MissingFile(path.to_path_buf())
            }
            _ => OodError::Csv(format!("{}: {e}", path.display())),
        })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| OodError::Csv(format!("{}: {e}", path.display())))?;
        if record.len() > *budget {
            return Err(OodError::Csv(format!(
                "CSV fixtures are limited to {CSV_MAX_CELLS} cells"
            )));
        }
        *budget -= record.len();
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|e| OodError::Csv(format!("{}: {cell:?}: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Loads a small hand-written fixture from a directory of header-less CSV
/// files: `weights.csv` (c rows of d values), `bias.csv` (c values, one row
/// or one column), and for each split `<split>.csv` with optional
/// `<split>.labels.csv`. At most [`CSV_MAX_CELLS`] cells in total.
pub fn load_csv_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut budget = CSV_MAX_CELLS;
    let weights = DenseMatrix::from_rows(&read_csv_rows(&dir.join("weights.csv"), &mut budget)?)
        .map_err(|e| OodError::Csv(format!("weights.csv: {e}")))?;
    let bias: Vec<f64> = read_csv_rows(&dir.join("bias.csv"), &mut budget)?.concat();
    let (c, d) = (weights.rows(), weights.cols());
    if bias.len() != c {
        return Err(shape_err("bias.csv", &format!("[{c}]"), &[bias.len()]));
    }
    let head = ClassifierHead::new(weights, bias)?;

    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| OodError::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter_map(|name| {
            let stem = name.strip_suffix(".csv")?;
            (!stem.ends_with(".labels") && stem != "weights" && stem != "bias")
                .then(|| stem.to_string())
        })
        .collect();
    names.sort();

    let mut splits = BTreeMap::new();
    for name in names {
        let rows = read_csv_rows(&dir.join(format!("{name}.csv")), &mut budget)?;
        if rows.is_empty() || rows.iter().any(|r| r.len() != d) {
            return Err(OodError::ShapeMismatch {
                tensor: format!("{name}.csv"),
                expected: format!("[N >= 1, {d}]"),
                actual: format!("{} rows", rows.len()),
            });
        }
        let features = FeatureMatrix::from_rows(&rows)
            .map_err(|_| OodError::NonFinite(format!("{name}.csv")))?;
        let label_path = dir.join(format!("{name}.labels.csv"));
        let labels = if label_path.exists() {
            let raw = read_csv_rows(&label_path, &mut budget)?.concat();
            if raw.len() != features.rows() {
                return Err(shape_err(
                    &format!("{name}.labels.csv"),
                    &format!("[{}]", features.rows()),
                    &[raw.len()],
                ));
            }
            if raw.iter().any(|v| v.fract() != 0.0) {
                return Err(OodError::Csv(format!(
                    "{name}.labels.csv: labels must be integers"
                )));
            }
            Some(validate_labels(
                &format!("{name}.labels.csv"),
                raw.iter().map(|&v| v as i64),
                c,
            )?)
        } else {
            None
        };
        splits.insert(name, Split { features, labels });
    }
    Ok(Dataset { head, splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dtype: u8, dims: &[u64]) -> Vec<u8> {
        let mut b = TENSOR_MAGIC.to_vec();
        b.push(dtype);
        b.push(dims.len() as u8);
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_f32_matrix() {
        let mut bytes = header(0, &[2, 2]);
        for x in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let t = TensorFile::decode(&bytes).unwrap();
        assert_eq!(t.shape, vec![2, 2]);
        assert_eq!(t.to_f64(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let mut bytes = header(0, &[2, 2]);
        bytes.extend_from_slice(&[0u8; 12]);
        assert!(matches!(
            TensorFile::decode(&bytes),
            Err(OodError::SizeMismatch {
                expected: 16,
                actual: 12
            })
        ));
    }

    #[test]
    fn decodes_f64_vector() {
        let mut bytes = header(1, &[3]);
        for x in [0.5f64, -1.0, 2.25] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        assert_eq!(bytes.len() - 18, 24);
        let t = TensorFile::decode(&bytes).unwrap();
        assert_eq!(t.data, TensorData::F64(vec![0.5, -1.0, 2.25]));
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(matches!(
            TensorFile::decode(b"OODTNSR2\x00\x01"),
            Err(OodError::MalformedHeader(_))
        ));
        assert!(matches!(
            TensorFile::decode(&header(7, &[1])),
            Err(OodError::UnsupportedDtype(7))
        ));
        assert!(matches!(
            TensorFile::decode(&header(0, &[1, 1, 1])),
            Err(OodError::MalformedHeader(_))
        ));
        assert!(matches!(
            TensorFile::decode(&header(0, &[])),
            Err(OodError::MalformedHeader(_))
        ));
    }

    #[test]
    fn head_needs_two_classes() {
        let w = DenseMatrix::zeros(1, 3);
        assert!(ClassifierHead::new(w, vec![0.0]).is_err());
    }
}
