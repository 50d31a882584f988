//! Correcting a misclassification by editing the linear weights.
//!
//! A proposal is a sparse delta `ΔW` (from a file, a chat-completions
//! endpoint, or a canned stub). Proposed edits tend to overshoot, so
//! [`line_search`] scans `W + β·ΔW` over a uniform grid on `[0, 1]` and keeps
//! the smallest `β` that fixes the target sample while breaking the fewest
//! previously-correct samples.

mod endpoint;
mod prompt;

use std::fs;
use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, forward, InterpretableHead};
use crate::projection::ProjectionMatrix;
use crate::tensor_io::LabelVector;

pub use endpoint::{fetch_proposal, EndpointConfig, ProposalProvider, JSON_INSTRUCTION};
pub use prompt::{build_prompt, PromptContext};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEdit {
    pub class: usize,
    pub concept: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalSource {
    File,
    Endpoint,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditProposal {
    pub edits: Vec<WeightEdit>,
    pub source: ProposalSource,
    pub raw_response: Option<String>,
}

/// Wire form `{"edits":[{"class":int,"concept":int,"delta":float}]}`.
#[derive(Debug, Serialize, Deserialize)]
struct EditsDocument {
    edits: Vec<RawEdit>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEdit {
    class: i64,
    concept: i64,
    delta: f64,
}

impl EditProposal {
    pub fn new(edits: Vec<WeightEdit>, source: ProposalSource) -> Self {
        Self {
            edits,
            source,
            raw_response: None,
        }
    }

    /// Parses and validates the JSON edit schema against a head with
    /// `num_classes × k` weights.
    pub fn from_json(text: &str, source: ProposalSource, num_classes: usize, k: usize) -> Result<Self> {
        let doc: EditsDocument = serde_json::from_str(text).map_err(|e| Error::Schema {
            message: e.to_string(),
            raw: text.to_string(),
        })?;
        let mut edits = Vec::with_capacity(doc.edits.len());
        for e in doc.edits {
            edits.push(WeightEdit {
                class: check_index("class", e.class, num_classes)?,
                concept: check_index("concept", e.concept, k)?,
                delta: e.delta,
            });
        }
        let proposal = Self {
            edits,
            source,
            raw_response: None,
        };
        proposal.validate(num_classes, k).map_err(|e| match e {
            Error::InvalidConfig(message) => Error::Schema {
                message,
                raw: text.to_string(),
            },
            other => other,
        })?;
        Ok(proposal)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = EditsDocument {
            edits: self
                .edits
                .iter()
                .map(|e| RawEdit {
                    class: e.class as i64,
                    concept: e.concept as i64,
                    delta: e.delta,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn validate(&self, num_classes: usize, k: usize) -> Result<()> {
        if self.edits.is_empty() {
            return Err(Error::InvalidConfig("proposal contains no edits".into()));
        }
        for e in &self.edits {
            check_index("class", e.class as i64, num_classes)?;
            check_index("concept", e.concept as i64, k)?;
            if !e.delta.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "non-finite delta for class {} concept {}",
                    e.class, e.concept
                )));
            }
        }
        Ok(())
    }
}

fn check_index(what: &'static str, index: i64, bound: usize) -> Result<usize> {
    if index < 0 || index as u64 >= bound as u64 {
        return Err(Error::IndexOutOfRange { what, index, bound });
    }
    Ok(index as usize)
}

pub fn load_proposal(path: &Path, num_classes: usize, k: usize) -> Result<EditProposal> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EditProposal::from_json(&text, ProposalSource::File, num_classes, k)
}

/// Returns a new head with `W' = W + β·ΔW`; the input is left untouched.
pub fn apply_edit(head: &InterpretableHead, proposal: &EditProposal, beta: f64) -> Result<InterpretableHead> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!("beta must be in [0, 1], got {beta}")));
    }
    proposal.validate(head.num_classes(), head.k())?;
    let mut edited = head.clone();
    if beta == 0.0 {
        return Ok(edited);
    }
    for e in &proposal.edits {
        edited.linear.weights[[e.class, e.concept]] += beta * e.delta;
    }
    Ok(edited)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta: f64,
    pub target_correct: bool,
    /// Eval samples correct before the edit and wrong after it.
    pub collateral: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchResult {
    pub beta_star: f64,
    pub flipped: bool,
    pub collateral: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub grid: Vec<GridPoint>,
}

/// `grid_size` evenly spaced values from 0 to 1 inclusive.
pub fn beta_grid(grid_size: usize) -> Vec<f64> {
    let last = (grid_size - 1) as f64;
    (0..grid_size).map(|i| i as f64 / last).collect()
}

/// Scans `β` over a uniform grid. A `β` is feasible when the target becomes
/// correctly classified; among feasible values the one with the fewest newly
/// misclassified eval samples wins, ties going to the smaller `β`. With no
/// feasible value the result has `flipped = false` and `β* = 0`.
pub fn line_search(
    head: &InterpretableHead,
    proposal: &EditProposal,
    target: (ArrayView1<f64>, usize),
    eval: (&ProjectionMatrix, &LabelVector),
    grid_size: usize,
) -> Result<LineSearchResult> {
    if grid_size < 2 {
        return Err(Error::InvalidConfig("grid_size must be at least 2".into()));
    }
    let (target_row, target_label) = target;
    let (eval_p, eval_y) = eval;
    if eval_p.k() != head.k() || eval_p.nrows() != eval_y.len() {
        return Err(Error::DimMismatch(format!(
            "eval set is {}x{} with {} labels for a head with k = {}",
            eval_p.nrows(),
            eval_p.k(),
            eval_y.len(),
            head.k()
        )));
    }
    if eval_y.is_empty() {
        return Err(Error::EmptySplit("line-search eval set".into()));
    }
    if target_label >= head.num_classes() {
        return Err(Error::IndexOutOfRange {
            what: "class",
            index: target_label as i64,
            bound: head.num_classes(),
        });
    }
    proposal.validate(head.num_classes(), head.k())?;
    if predict(head, target_row)? == target_label {
        return Err(Error::TargetAlreadyCorrect);
    }

    let correct_before: Vec<bool> = (0..eval_p.nrows())
        .map(|i| Ok(predict(head, eval_p.row(i))? == eval_y.labels()[i]))
        .collect::<Result<_>>()?;
    let n = correct_before.len() as f64;
    let accuracy_before = correct_before.iter().filter(|&&c| c).count() as f64 / n;

    let mut grid = Vec::with_capacity(grid_size);
    let mut best: Option<(usize, usize, usize)> = None; // (grid index, collateral, correct)
    for (g, beta) in beta_grid(grid_size).into_iter().enumerate() {
        let edited = apply_edit(head, proposal, beta)?;
        let target_correct = predict(&edited, target_row)? == target_label;
        let mut collateral = 0;
        let mut correct = 0;
        for (i, &was_correct) in correct_before.iter().enumerate() {
            let now = predict(&edited, eval_p.row(i))? == eval_y.labels()[i];
            correct += now as usize;
            collateral += (was_correct && !now) as usize;
        }
        if target_correct && best.is_none_or(|(_, c, _)| collateral < c) {
            best = Some((g, collateral, correct));
        }
        grid.push(GridPoint {
            beta,
            target_correct,
            collateral,
        });
    }

    Ok(match best {
        Some((g, collateral, correct)) => LineSearchResult {
            beta_star: grid[g].beta,
            flipped: true,
            collateral,
            accuracy_before,
            accuracy_after: correct as f64 / n,
            grid,
        },
        None => LineSearchResult {
            beta_star: 0.0,
            flipped: false,
            collateral: 0,
            accuracy_before,
            accuracy_after: accuracy_before,
            grid,
        },
    })
}

fn predict(head: &InterpretableHead, row: ArrayView1<f64>) -> Result<usize> {
    Ok(argmax(forward(row, head, None)?.view()))
}
