//! The interpretable head: an input-dependent concept gate followed by a
//! linear layer.
//!
//! For a similarity row `p`, the gate keeps `π = max(0, p − o)` and the logits
//! are `W·π + b`. Since the logits are linear in `π`, each logit decomposes
//! exactly into per-concept contributions `W[c, j]·π_j` plus the bias.

use ndarray::{Array1, Array2, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::discovery::ConceptDictionary;
use crate::error::{Error, Result};
use crate::projection::ProjectionMode;

/// Non-negative per-concept offsets `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub offsets: Array1<f64>,
}

impl GateParams {
    pub fn zeros(k: usize) -> Self {
        Self {
            offsets: Array1::zeros(k),
        }
    }

    pub fn k(&self) -> usize {
        self.offsets.len()
    }

    /// Projects the offsets back onto `o ≥ 0`.
    pub fn clamp(&mut self) {
        self.offsets.mapv_inplace(|v| v.max(0.0));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    /// `|Y| × k`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearHead {
    pub fn zeros(num_classes: usize, k: usize) -> Self {
        Self {
            weights: Array2::zeros((num_classes, k)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn k(&self) -> usize {
        self.weights.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretableHead {
    /// `None` for the plain sparse linear model without concept selection.
    pub gate: Option<GateParams>,
    pub linear: LinearHead,
    pub projection_mode: ProjectionMode,
    /// Checksum of the dictionary the head was trained against.
    pub dict_ref: String,
}

impl InterpretableHead {
    pub fn new(gate: Option<GateParams>, linear: LinearHead, projection_mode: ProjectionMode) -> Result<Self> {
        let head = Self {
            gate,
            linear,
            projection_mode,
            dict_ref: String::new(),
        };
        head.validate()?;
        Ok(head)
    }

    /// Untrained head: zero offsets (the gate is a ReLU), zero weights and bias.
    pub fn init(k: usize, num_classes: usize, gated: bool, projection_mode: ProjectionMode) -> Self {
        Self {
            gate: gated.then(|| GateParams::zeros(k)),
            linear: LinearHead::zeros(num_classes, k),
            projection_mode,
            dict_ref: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.linear.k();
        if k == 0 || self.linear.num_classes() == 0 {
            return Err(Error::IncompatibleShapes("head has no concepts or classes".into()));
        }
        if self.linear.bias.len() != self.linear.num_classes() {
            return Err(Error::IncompatibleShapes(format!(
                "bias has {} entries for {} classes",
                self.linear.bias.len(),
                self.linear.num_classes()
            )));
        }
        if let Some(gate) = &self.gate {
            if gate.k() != k {
                return Err(Error::IncompatibleShapes(format!(
                    "gate has {} offsets, linear layer has {k} concepts",
                    gate.k()
                )));
            }
            if gate.offsets.iter().any(|&o| !(o >= 0.0) || !o.is_finite()) {
                return Err(Error::InvalidConfig("gate offsets must be finite and >= 0".into()));
            }
        }
        if self
            .linear
            .weights
            .iter()
            .chain(self.linear.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidConfig("head parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.linear.k()
    }

    pub fn num_classes(&self) -> usize {
        self.linear.num_classes()
    }

    pub fn is_gated(&self) -> bool {
        self.gate.is_some()
    }

    pub fn bind_dictionary(&mut self, dict: &ConceptDictionary) -> Result<()> {
        if dict.k() != self.k() {
            return Err(Error::IncompatibleShapes(format!(
                "dictionary has {} concepts, head has {}",
                dict.k(),
                self.k()
            )));
        }
        self.dict_ref = dict.checksum();
        Ok(())
    }

    /// Fails unless `dict` is the dictionary recorded in `dict_ref`.
    pub fn check_dictionary(&self, dict: &ConceptDictionary) -> Result<()> {
        if dict.k() != self.k() || dict.checksum() != self.dict_ref {
            return Err(Error::IncompatibleShapes(
                "head was trained against a different dictionary".into(),
            ));
        }
        Ok(())
    }

    fn check_row(&self, p_row: ArrayView1<f64>) -> Result<()> {
        if p_row.len() != self.k() {
            return Err(Error::DimMismatch(format!(
                "similarity row has {} entries, head expects {}",
                p_row.len(),
                self.k()
            )));
        }
        Ok(())
    }

    /// Gate output `π`. A head without a gate passes similarities through.
    pub fn gated(&self, p_row: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_row(p_row)?;
        Ok(match &self.gate {
            Some(gate) => gate_forward(p_row, gate),
            None => p_row.to_owned(),
        })
    }

    pub fn predict(&self, p_row: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax(forward(p_row, self, None)?.view()))
    }
}

/// `max(0, p − o)` elementwise.
pub fn gate_forward(p_row: ArrayView1<f64>, gate: &GateParams) -> Array1<f64> {
    Zip::from(p_row)
        .and(&gate.offsets)
        .map_collect(|&p, &o| (p - o).max(0.0))
}

/// Logits `W·(mask ⊙ π) + b`.
///
/// `dropout_mask` holds per-concept multipliers: `0` for dropped concepts and
/// the inverted keep-probability scale `1/(1 − rate)` for kept ones.
pub fn forward(
    p_row: ArrayView1<f64>,
    head: &InterpretableHead,
    dropout_mask: Option<ArrayView1<f64>>,
) -> Result<Array1<f64>> {
    let mut pi = head.gated(p_row)?;
    if let Some(mask) = dropout_mask {
        if mask.len() != head.k() {
            return Err(Error::DimMismatch(format!(
                "dropout mask has {} entries, head expects {}",
                mask.len(),
                head.k()
            )));
        }
        pi *= &mask;
    }
    Ok(head.linear.weights.dot(&pi) + &head.linear.bias)
}

/// `|Y| × k` matrix of `W[c, j]·π_j`.
pub fn contributions(p_row: ArrayView1<f64>, head: &InterpretableHead) -> Result<Array2<f64>> {
    let pi = head.gated(p_row)?;
    Ok(&head.linear.weights * &pi)
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
