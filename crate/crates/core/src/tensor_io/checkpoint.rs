//! Checkpoint directories.
//!
//! A checkpoint is a directory holding:
//!
//! * `dict.raw`: the `p × k` dictionary, column-major little-endian f64
//!   (concept 0's `p` entries first);
//! * `head.raw` (optional): the head parameters as little-endian f64, in the
//!   order `o` (`k` values, absent for heads without a gate), `W` (`|Y| × k`,
//!   row-major), `b` (`|Y|` values);
//! * `meta.json`: format version, shapes, seed and configs.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{f64s_le, le_f64s, write_atomic};
use crate::discovery::{ConceptDictionary, DiscoveryConfig, DiscoveryMethod};
use crate::error::{Error, Result};
use crate::model::{GateParams, InterpretableHead, LinearHead};
use crate::projection::ProjectionMode;
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: &str = "ucbm-checkpoint/1";
const HEAD_LAYOUT: &str = "o|W(row-major)|b";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: String,
    seed: u64,
    dictionary: DictMeta,
    head: Option<HeadMeta>,
    train_config: Option<TrainConfig>,
    discovery_config: Option<DiscoveryConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DictMeta {
    p: usize,
    k: usize,
    method: DiscoveryMethod,
    labels: Vec<Option<String>>,
    norm_folded: bool,
    checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadMeta {
    k: usize,
    num_classes: usize,
    gated: bool,
    projection_mode: ProjectionMode,
    dict_ref: String,
    layout: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dictionary: ConceptDictionary,
    pub head: Option<InterpretableHead>,
    pub train_config: Option<TrainConfig>,
    pub discovery_config: Option<DiscoveryConfig>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn require_head(&self) -> Result<&InterpretableHead> {
        self.head
            .as_ref()
            .ok_or_else(|| Error::MissingField("checkpoint has no trained head".into()))
    }
}

/// Saves a trained head with the dictionary it was trained against. A head
/// with an empty `dict_ref` is bound to `dict` on the way out.
pub fn save_checkpoint(
    head: &InterpretableHead,
    dict: &ConceptDictionary,
    cfg: &TrainConfig,
    path: &Path,
) -> Result<()> {
    if head.k() != dict.k() {
        return Err(Error::IncompatibleShapes(format!(
            "head has k = {} but dictionary has k = {}",
            head.k(),
            dict.k()
        )));
    }
    head.validate()?;
    let checksum = dict.checksum();
    if !head.dict_ref.is_empty() && head.dict_ref != checksum {
        return Err(Error::IncompatibleShapes(
            "head was trained against a different dictionary".into(),
        ));
    }
    write(
        path,
        &Checkpoint {
            dictionary: dict.clone(),
            head: Some(InterpretableHead {
                dict_ref: checksum,
                ..head.clone()
            }),
            train_config: Some(cfg.clone()),
            discovery_config: None,
            seed: cfg.seed,
        },
    )
}

/// Saves a dictionary on its own (the output of concept discovery).
pub fn save_dictionary(
    dict: &ConceptDictionary,
    cfg: Option<&DiscoveryConfig>,
    path: &Path,
) -> Result<()> {
    write(
        path,
        &Checkpoint {
            dictionary: dict.clone(),
            head: None,
            train_config: None,
            discovery_config: cfg.cloned(),
            seed: cfg.map_or(0, |c| c.seed),
        },
    )
}

fn write(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let dict = &ckpt.dictionary;
    write_atomic(&path.join("dict.raw"), &f64s_le(dict.column_major().iter()))?;

    let head_meta = match &ckpt.head {
        Some(head) => {
            let mut values: Vec<f64> = Vec::new();
            if let Some(gate) = &head.gate {
                values.extend(gate.offsets.iter());
            }
            values.extend(head.linear.weights.iter());
            values.extend(head.linear.bias.iter());
            write_atomic(&path.join("head.raw"), &f64s_le(values.iter()))?;
            Some(HeadMeta {
                k: head.k(),
                num_classes: head.num_classes(),
                gated: head.is_gated(),
                projection_mode: head.projection_mode,
                dict_ref: head.dict_ref.clone(),
                layout: HEAD_LAYOUT.into(),
            })
        }
        None => {
            let stale = path.join("head.raw");
            if stale.exists() {
                fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
            }
            None
        }
    };

    let meta = Meta {
        format_version: CHECKPOINT_VERSION.into(),
        seed: ckpt.seed,
        dictionary: DictMeta {
            p: dict.p(),
            k: dict.k(),
            method: dict.method(),
            labels: dict.labels().to_vec(),
            norm_folded: dict.norm_folded(),
            checksum: dict.checksum(),
        },
        head: head_meta,
        train_config: ckpt.train_config.clone(),
        discovery_config: ckpt.discovery_config.clone(),
    };
    write_atomic(
        &path.join("meta.json"),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let meta_path = path.join("meta.json");
    let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes)?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version.to_string()));
    }
    let meta: Meta = serde_json::from_value(raw)?;

    let dict_path = path.join("dict.raw");
    let dict_bytes = fs::read(&dict_path).map_err(|e| Error::io(&dict_path, e))?;
    let dm = &meta.dictionary;
    if dict_bytes.len() != dm.p * dm.k * 8 {
        return Err(Error::ShapeMismatch(format!(
            "dict.raw has {} bytes, expected {}x{} f64",
            dict_bytes.len(),
            dm.p,
            dm.k
        )));
    }
    let dictionary = ConceptDictionary::from_column_major(
        le_f64s(&dict_bytes),
        dm.p,
        dm.k,
        dm.method,
        dm.norm_folded,
    )?
    .with_labels(dm.labels.clone())?;

    let head = match &meta.head {
        Some(hm) => Some(read_head(path, hm, &dictionary)?),
        None => None,
    };

    Ok(Checkpoint {
        dictionary,
        head,
        train_config: meta.train_config,
        discovery_config: meta.discovery_config,
        seed: meta.seed,
    })
}

fn read_head(path: &Path, hm: &HeadMeta, dict: &ConceptDictionary) -> Result<InterpretableHead> {
    if hm.layout != HEAD_LAYOUT {
        return Err(Error::UnsupportedFormat(format!("head layout {:?}", hm.layout)));
    }
    let head_path = path.join("head.raw");
    let bytes = fs::read(&head_path).map_err(|e| Error::io(&head_path, e))?;
    let (k, c) = (hm.k, hm.num_classes);
    let gate_len = if hm.gated { k } else { 0 };
    let expected = gate_len + c * k + c;
    if bytes.len() != expected * 8 {
        return Err(Error::ShapeMismatch(format!(
            "head.raw has {} bytes, expected {expected} f64",
            bytes.len()
        )));
    }
    let values = le_f64s(&bytes);
    let (o, rest) = values.split_at(gate_len);
    let (w, b) = rest.split_at(c * k);
    let gate = hm.gated.then(|| GateParams {
        offsets: Array1::from(o.to_vec()),
    });
    let linear = LinearHead {
        weights: Array2::from_shape_vec((c, k), w.to_vec())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        bias: Array1::from(b.to_vec()),
    };
    let mut head = InterpretableHead::new(gate, linear, hm.projection_mode)?;
    head.dict_ref = hm.dict_ref.clone();
    head.check_dictionary(dict)?;
    Ok(head)
}
