//! Unsupervised concept discovery as dictionary learning.
//!
//! Each method approximately solves `min ‖A − U·Cᵀ‖²_F` under its own
//! constraint set:
//!
//! | method   | constraint                        |
//! |----------|-----------------------------------|
//! | `nmf`    | `U ≥ 0`, `C ≥ 0`                  |
//! | `pca`    | `CᵀC = I`                         |
//! | `kmeans` | every row of `U` has one non-zero |
//!
//! All methods return unit-norm concept columns. Where the solver produces
//! unnormalized columns, their norms are folded into `U` so that `U·Cᵀ` is
//! unchanged.

mod kmeans;
mod nmf;
mod pca;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor_io::{f64s_le, ActivationMatrix};

pub use kmeans::discover_kmeans;
pub use nmf::discover_nmf;
pub use pca::discover_pca;

/// Tolerance on unit column norms.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscoveryMethod {
    Nmf,
    Pca,
    Kmeans,
}

impl FromStr for DiscoveryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmf" => Ok(DiscoveryMethod::Nmf),
            "pca" => Ok(DiscoveryMethod::Pca),
            "kmeans" | "k-means" => Ok(DiscoveryMethod::Kmeans),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for DiscoveryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscoveryMethod::Nmf => "nmf",
            DiscoveryMethod::Pca => "pca",
            DiscoveryMethod::Kmeans => "kmeans",
        })
    }
}

/// What NMF does with negative activations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativePolicy {
    Reject,
    #[default]
    Clamp,
}

impl FromStr for NegativePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(NegativePolicy::Reject),
            "clamp" => Ok(NegativePolicy::Clamp),
            other => Err(Error::InvalidConfig(format!(
                "unknown negative policy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub k: usize,
    pub method: DiscoveryMethod,
    pub max_iters: usize,
    /// Early stop once the relative objective change drops below this.
    pub tol: f64,
    pub seed: u64,
    pub negative_policy: NegativePolicy,
}

impl DiscoveryConfig {
    pub fn new(k: usize, method: DiscoveryMethod) -> Self {
        Self {
            k,
            method,
            max_iters: 2000,
            tol: 1e-7,
            seed: 0,
            negative_policy: NegativePolicy::Clamp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// A `p × k` dictionary whose columns are unit-norm concept vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDictionary {
    concepts: Array2<f64>,
    method: DiscoveryMethod,
    labels: Vec<Option<String>>,
    norm_folded: bool,
}

impl ConceptDictionary {
    pub fn new(concepts: Array2<f64>, method: DiscoveryMethod, norm_folded: bool) -> Result<Self> {
        let (p, k) = concepts.dim();
        if p == 0 || k == 0 {
            return Err(Error::ShapeMismatch(format!(
                "dictionary must be non-empty, got {p}x{k}"
            )));
        }
        if let Some(pos) = concepts.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / k,
                col: pos % k,
            });
        }
        for (j, col) in concepts.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "concept {j} has norm {norm}, expected 1"
                )));
            }
        }
        if method == DiscoveryMethod::Nmf && concepts.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig(
                "nmf dictionary has negative entries".into(),
            ));
        }
        Ok(Self {
            concepts: concepts.as_standard_layout().into_owned(),
            method,
            labels: vec![None; k],
            norm_folded,
        })
    }

    pub fn with_labels(mut self, labels: Vec<Option<String>>) -> Result<Self> {
        if labels.len() != self.k() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} concepts",
                labels.len(),
                self.k()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    /// The `p × k` concept matrix.
    pub fn concepts(&self) -> &Array2<f64> {
        &self.concepts
    }

    pub fn p(&self) -> usize {
        self.concepts.nrows()
    }

    pub fn k(&self) -> usize {
        self.concepts.ncols()
    }

    pub fn method(&self) -> DiscoveryMethod {
        self.method
    }

    pub fn labels(&self) -> &[Option<String>] {
        &self.labels
    }

    pub fn label(&self, j: usize) -> Option<&str> {
        self.labels.get(j).and_then(|l| l.as_deref())
    }

    pub fn norm_folded(&self) -> bool {
        self.norm_folded
    }

    /// Concept entries in column-major order (concept 0 first).
    pub fn column_major(&self) -> Vec<f64> {
        self.concepts.t().iter().copied().collect()
    }

    pub(crate) fn from_column_major(
        values: Vec<f64>,
        p: usize,
        k: usize,
        method: DiscoveryMethod,
        norm_folded: bool,
    ) -> Result<Self> {
        let transposed = Array2::from_shape_vec((k, p), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(transposed.reversed_axes(), method, norm_folded)
    }

    /// Hex SHA-256 of the column-major little-endian concept payload. Heads
    /// store this to detect use with a different dictionary.
    pub fn checksum(&self) -> String {
        let bytes = f64s_le(self.column_major().iter());
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryResult {
    pub dictionary: ConceptDictionary,
    /// `n × k` coefficients with column norms of the raw dictionary folded in.
    pub coefficients: Array2<f64>,
    /// Objective `‖A − U·Cᵀ‖²_F` after each iteration.
    pub residual_history: Vec<f64>,
    pub iterations_run: usize,
    /// Number of negative entries zeroed under [`NegativePolicy::Clamp`].
    pub clamped_entries: usize,
}

impl DiscoveryResult {
    /// `‖A − U·Cᵀ‖_F / ‖A‖_F`, or the absolute residual when `A = 0`.
    pub fn relative_residual(&self, a: &Array2<f64>) -> f64 {
        let num = objective(a.view(), self.coefficients.view(), self.dictionary.concepts().view()).sqrt();
        let den = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }
}

pub fn discover(a: &ActivationMatrix, cfg: &DiscoveryConfig) -> Result<DiscoveryResult> {
    match cfg.method {
        DiscoveryMethod::Nmf => discover_nmf(a, cfg),
        DiscoveryMethod::Pca => discover_pca(a, cfg),
        DiscoveryMethod::Kmeans => discover_kmeans(a, cfg),
    }
}

/// `‖A − U·Cᵀ‖²_F`, computed from the explicit residual.
pub(crate) fn objective(a: ArrayView2<f64>, u: ArrayView2<f64>, c: ArrayView2<f64>) -> f64 {
    let recon = u.dot(&c.t());
    a.iter()
        .zip(recon.iter())
        .map(|(x, r)| (x - r) * (x - r))
        .sum()
}

/// Normalizes the columns of `c` to unit length and scales the matching
/// columns of `u` by the removed norms. Columns with zero norm are left
/// untouched and reported.
pub(crate) fn fold_norms(u: &mut Array2<f64>, c: &mut Array2<f64>) -> Vec<usize> {
    let mut zero = Vec::new();
    for (j, (mut cj, mut uj)) in c
        .axis_iter_mut(Axis(1))
        .zip(u.axis_iter_mut(Axis(1)))
        .enumerate()
    {
        let norm = cj.dot(&cj).sqrt();
        if norm > 0.0 {
            cj.mapv_inplace(|v| v / norm);
            uj.mapv_inplace(|v| v * norm);
        } else {
            zero.push(j);
        }
    }
    zero
}
