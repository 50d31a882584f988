//! Similarities between activations and concept vectors.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::discovery::ConceptDictionary;
use crate::error::{Error, Result};
use crate::tensor_io::ActivationMatrix;

/// Guard against division by a zero activation norm.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// `⟨a, c⟩ / max(‖a‖, ε)`, bounded in `[-1, 1]` for unit concepts.
    #[default]
    Cosine,
    /// `⟨a, c⟩` against the unit concept, unbounded.
    DotUnitConcept,
}

impl FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ProjectionMode::Cosine),
            "dot_unit_concept" | "dot" => Ok(ProjectionMode::DotUnitConcept),
            other => Err(Error::InvalidConfig(format!(
                "unknown projection mode {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionMode::Cosine => "cosine",
            ProjectionMode::DotUnitConcept => "dot_unit_concept",
        })
    }
}

/// `n × k` concept similarities, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    values: Array2<f64>,
    mode: ProjectionMode,
}

impl ProjectionMatrix {
    /// Wraps precomputed similarities (for example loaded from disk).
    pub fn from_values(values: Array2<f64>, mode: ProjectionMode) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let k = values.ncols();
            return Err(Error::NonFinite {
                row: pos / k,
                col: pos % k,
            });
        }
        Ok(Self { values, mode })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// Restricts to the given sample rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            mode: self.mode,
        }
    }
}

pub fn project(
    a: &ActivationMatrix,
    dict: &ConceptDictionary,
    mode: ProjectionMode,
) -> Result<ProjectionMatrix> {
    if a.ncols() != dict.p() {
        return Err(Error::DimMismatch(format!(
            "activations have {} dims, dictionary has {}",
            a.ncols(),
            dict.p()
        )));
    }
    let mut values = a.data().dot(dict.concepts());
    if mode == ProjectionMode::Cosine {
        for (mut row, act) in values.rows_mut().into_iter().zip(a.data().rows()) {
            let norm = act.dot(&act).sqrt().max(ZERO_NORM_EPS);
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(ProjectionMatrix { values, mode })
}

/// Similarities of a single activation row.
pub fn project_row(
    a: ArrayView1<f64>,
    dict: &ConceptDictionary,
    mode: ProjectionMode,
) -> Result<Array1<f64>> {
    if a.len() != dict.p() {
        return Err(Error::DimMismatch(format!(
            "activation has {} dims, dictionary has {}",
            a.len(),
            dict.p()
        )));
    }
    let dots = dict.concepts().t().dot(&a);
    Ok(match mode {
        ProjectionMode::DotUnitConcept => dots,
        ProjectionMode::Cosine => {
            let norm = a.dot(&a).sqrt().max(ZERO_NORM_EPS);
            dots / norm
        }
    })
}

/// Indices of the `m` largest values, ties to the lower index.
pub fn top_m(values: ArrayView1<f64>, m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(m);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub concept: usize,
    pub similarity: f64,
}

/// Similarity changes of one activation before and after an intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionComparison {
    pub mode: ProjectionMode,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    /// `after − before` per concept.
    pub deltas: Vec<f64>,
    pub top_before: Vec<RankedConcept>,
    pub top_after: Vec<RankedConcept>,
    /// Concepts in the top-m before but not after, in `top_before` order.
    pub disappeared: Vec<usize>,
}

pub fn compare_projections(
    before: ArrayView1<f64>,
    after: ArrayView1<f64>,
    dict: &ConceptDictionary,
    mode: ProjectionMode,
    top: usize,
) -> Result<ProjectionComparison> {
    let b = project_row(before, dict, mode)?;
    let a = project_row(after, dict, mode)?;
    let ranked = |v: &Array1<f64>| -> Vec<RankedConcept> {
        top_m(v.view(), top)
            .into_iter()
            .map(|j| RankedConcept {
                concept: j,
                similarity: v[j],
            })
            .collect()
    };
    let top_before = ranked(&b);
    let top_after = ranked(&a);
    let disappeared = top_before
        .iter()
        .map(|r| r.concept)
        .filter(|j| !top_after.iter().any(|r| r.concept == *j))
        .collect();
    Ok(ProjectionComparison {
        mode,
        deltas: a.iter().zip(b.iter()).map(|(x, y)| x - y).collect(),
        before: b.to_vec(),
        after: a.to_vec(),
        top_before,
        top_after,
        disappeared,
    })
}

/// Removes the component of `a` along the unit concept `c`.
pub fn remove_concept(a: ArrayView1<f64>, c: ArrayView1<f64>) -> Array1<f64> {
    let coeff = a.dot(&c);
    &a - &(&c * coeff)
}
