//! Loading and persisting activation matrices, labels, splits and
//! checkpoints.

mod checkpoint;
pub mod npy;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, save_dictionary, Checkpoint, CHECKPOINT_VERSION,
};

/// Dense `n × p` matrix of finite `f64` values, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    data: Array2<f64>,
    sample_ids: Option<Vec<String>>,
}

impl ActivationMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, p) = data.dim();
        if n == 0 || p == 0 {
            return Err(Error::ShapeMismatch(format!(
                "matrix must be non-empty, got {n}x{p}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / p,
                col: pos % p,
            });
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self {
            data,
            sample_ids: None,
        })
    }

    pub fn with_sample_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} sample ids for {} rows",
                ids.len(),
                self.nrows()
            )));
        }
        self.sample_ids = Some(ids);
        Ok(self)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    pub fn sample_id(&self, i: usize) -> String {
        match &self.sample_ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }
}

/// Class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidLabels(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidLabels(format!(
                "label {y} at row {i} is not below num_classes = {num_classes}"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    /// Infers `num_classes` as `max(label) + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(labels, num_classes)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Disjoint train/validation/test index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" | "validation" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::InvalidConfig(format!("unknown split part {other:?}"))),
        }
    }
}

impl DatasetSplit {
    /// Checks that every index is below `n` and that the parts are pairwise
    /// disjoint.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner = vec![None::<&str>; n];
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in part {
                let slot = owner.get_mut(i).ok_or(Error::IndexOutOfRange {
                    what: "split",
                    index: i as i64,
                    bound: n,
                })?;
                if let Some(prev) = slot {
                    return Err(Error::InvalidConfig(format!(
                        "sample {i} appears in both {prev} and {name}"
                    )));
                }
                *slot = Some(name);
            }
        }
        Ok(())
    }

    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    Npy,
    Csv,
    RawF64,
}

impl MatrixFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("npy") => Ok(MatrixFormat::Npy),
            Some("csv") => Ok(MatrixFormat::Csv),
            Some("raw") | Some("f64") | Some("bin") => Ok(MatrixFormat::RawF64),
            _ => Err(Error::UnsupportedFormat(format!(
                "cannot infer matrix format from {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npy" => Ok(MatrixFormat::Npy),
            "csv" => Ok(MatrixFormat::Csv),
            "raw-f64" | "raw" => Ok(MatrixFormat::RawF64),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for MatrixFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixFormat::Npy => "npy",
            MatrixFormat::Csv => "csv",
            MatrixFormat::RawF64 => "raw-f64",
        })
    }
}

/// Sidecar shape descriptor of the raw little-endian f64 format, stored next
/// to the payload as `<payload>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDescriptor {
    pub shape: [usize; 2],
    pub dtype: String,
    pub order: String,
}

pub fn raw_descriptor_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<ActivationMatrix> {
    match format {
        MatrixFormat::Npy => ActivationMatrix::new(npy::decode(&read(path)?)?),
        MatrixFormat::Csv => {
            let text = String::from_utf8(read(path)?)
                .map_err(|_| Error::UnsupportedFormat("CSV is not valid UTF-8".into()))?;
            parse_csv(&text)
        }
        MatrixFormat::RawF64 => {
            let desc_path = raw_descriptor_path(path);
            let desc: RawDescriptor = serde_json::from_slice(&read(&desc_path)?)?;
            if desc.dtype != "<f8" || desc.order != "C" {
                return Err(Error::UnsupportedFormat(format!(
                    "raw descriptor dtype {:?} order {:?}",
                    desc.dtype, desc.order
                )));
            }
            decode_raw(&read(path)?, desc.shape[0], desc.shape[1])
        }
    }
}

/// Decodes a little-endian f64 payload declared as `rows × cols`.
pub fn decode_raw(bytes: &[u8], rows: usize, cols: usize) -> Result<ActivationMatrix> {
    let expected = rows * cols * 8;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "declared {rows}x{cols} needs {expected} bytes, payload has {}",
            bytes.len()
        )));
    }
    let values = le_f64s(bytes);
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    ActivationMatrix::new(data)
}

pub(crate) fn le_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub(crate) fn f64s_le<'a>(values: impl IntoIterator<Item = &'a f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Parses CSV text. A first line that does not parse as numbers is treated
/// as a header; a header whose first column is `sample_id` marks that column
/// as sample identifiers.
pub fn parse_csv(text: &str) -> Result<ActivationMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let mut has_ids = false;
    if let Some(first) = lines.peek() {
        let cells: Vec<&str> = first.split(',').map(str::trim).collect();
        if cells.iter().any(|c| c.parse::<f64>().is_err()) {
            has_ids = cells.first() == Some(&"sample_id");
            lines.next();
        }
    }

    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut cols = None;
    for (row, line) in lines.enumerate() {
        let mut cells = line.split(',').map(str::trim);
        if has_ids {
            ids.push(cells.next().unwrap_or_default().to_string());
        }
        let mut count = 0;
        for (col, cell) in cells.enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::UnsupportedFormat(format!("row {row}, column {col}: {cell:?} is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::ShapeMismatch(format!(
                    "row {row} has {count} columns, expected {c}"
                )))
            }
            _ => {}
        }
    }
    let cols = cols.unwrap_or(0);
    let rows = values.len().checked_div(cols).unwrap_or(0);
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let m = ActivationMatrix::new(data)?;
    if has_ids {
        m.with_sample_ids(ids)
    } else {
        Ok(m)
    }
}

/// Renders a matrix as headered CSV. Values use the shortest decimal
/// representation that parses back to the same `f64`.
pub fn to_csv(m: &ActivationMatrix) -> String {
    let mut out = String::new();
    let ids = m.sample_ids();
    let header: Vec<String> = ids
        .map(|_| "sample_id".to_string())
        .into_iter()
        .chain((0..m.ncols()).map(|j| format!("d{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in m.data().rows().into_iter().enumerate() {
        let cells: Vec<String> = ids
            .map(|ids| ids[i].clone())
            .into_iter()
            .chain(row.iter().map(|v| format!("{v:?}")))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn save_matrix(path: &Path, format: MatrixFormat, m: &ActivationMatrix) -> Result<()> {
    match format {
        MatrixFormat::Npy => write_atomic(path, &npy::encode(m.data())),
        MatrixFormat::Csv => write_atomic(path, to_csv(m).as_bytes()),
        MatrixFormat::RawF64 => {
            let desc = RawDescriptor {
                shape: [m.nrows(), m.ncols()],
                dtype: "<f8".into(),
                order: "C".into(),
            };
            write_atomic(
                &raw_descriptor_path(path),
                serde_json::to_string_pretty(&desc)?.as_bytes(),
            )?;
            write_atomic(path, &f64s_le(m.data().iter()))
        }
    }
}

/// Writes an arbitrary finite-or-not array as NPY (used for outputs such as
/// coefficient matrices that never need validation on the way out).
pub fn save_npy(path: &Path, data: &Array2<f64>) -> Result<()> {
    write_atomic(path, &npy::encode(data))
}

/// Reads a one-column CSV of class indices (an optional non-numeric header
/// line is skipped). `num_classes` defaults to `max(label) + 1`.
pub fn load_labels(path: &Path, num_classes: Option<usize>) -> Result<LabelVector> {
    let text = String::from_utf8(read(path)?)
        .map_err(|_| Error::UnsupportedFormat("label CSV is not valid UTF-8".into()))?;
    let labels = parse_labels(&text)?;
    match num_classes {
        Some(c) => LabelVector::new(labels, c),
        None => LabelVector::from_labels(labels),
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        if line.contains(',') {
            return Err(Error::InvalidLabels(format!(
                "line {i} has more than one column"
            )));
        }
        match line.parse::<usize>() {
            Ok(y) => labels.push(y),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::InvalidLabels(format!(
                    "line {i}: {line:?} is not a class index"
                )))
            }
        }
    }
    Ok(labels)
}

pub fn save_labels(path: &Path, labels: &LabelVector) -> Result<()> {
    let mut out = String::from("label\n");
    for y in labels.labels() {
        out.push_str(&y.to_string());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_split(path: &Path) -> Result<DatasetSplit> {
    Ok(serde_json::from_slice(&read(path)?)?)
}

pub fn save_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(split)?.as_bytes())
}
