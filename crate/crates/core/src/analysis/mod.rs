//! Accuracy, per-input concept usage, hyperparameter sweeps, Pareto
//! filtering and per-sample explanations.

mod explain;
mod pareto;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, forward, InterpretableHead};
use crate::projection::ProjectionMatrix;
use crate::tensor_io::{DatasetSplit, LabelVector};
use crate::training::{fit, TrainConfig};

pub use explain::{explain, ClassExplanation, ContributionEntry, ExplanationReport};
pub use pareto::{pareto_filter, TradeoffPoint};

/// Default "approximately zero" threshold for similarities, gate outputs and
/// weight columns.
pub const ACTIVE_THRESHOLD: f64 = 1e-5;

fn check_shapes(p: &ProjectionMatrix, head: &InterpretableHead) -> Result<()> {
    if p.k() != head.k() {
        return Err(Error::DimMismatch(format!(
            "similarities have {} concepts, head has {}",
            p.k(),
            head.k()
        )));
    }
    Ok(())
}

/// Top-1 accuracy over all samples; argmax ties go to the lowest class.
pub fn evaluate(p: &ProjectionMatrix, labels: &LabelVector, head: &InterpretableHead) -> Result<f64> {
    let all: Vec<usize> = (0..p.nrows()).collect();
    accuracy_on(p, labels, head, &all)
}

/// Top-1 accuracy over the given sample indices.
pub fn accuracy_on(
    p: &ProjectionMatrix,
    labels: &LabelVector,
    head: &InterpretableHead,
    indices: &[usize],
) -> Result<f64> {
    check_shapes(p, head)?;
    if labels.len() != p.nrows() {
        return Err(Error::DimMismatch(format!(
            "{} similarity rows but {} labels",
            p.nrows(),
            labels.len()
        )));
    }
    if indices.is_empty() {
        return Err(Error::EmptySplit("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for &i in indices {
        let logits = forward(p.row(i), head, None)?;
        if argmax(logits.view()) == labels.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Which conditions make a concept count as active for an input. All three
/// are on by default; switching one off is useful for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveRule {
    pub threshold: f64,
    pub require_gate: bool,
    pub require_similarity: bool,
    pub require_weight: bool,
}

impl Default for ActiveRule {
    fn default() -> Self {
        Self {
            threshold: ACTIVE_THRESHOLD,
            require_gate: true,
            require_similarity: true,
            require_weight: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub mean_active: f64,
    /// Population standard deviation of the per-sample counts.
    pub std_active: f64,
    pub total_available: usize,
    pub threshold: f64,
    pub per_sample_counts: Vec<usize>,
}

/// Counts, per input, the concepts that pass every enabled condition of
/// `rule`: gate output `π_j > ε`, similarity `|P[i, j]| > ε`, and a weight
/// column with `max_c |W[c, j]| > ε`. Heads without a gate use
/// `π = max(0, P)`.
pub fn count_active_concepts(
    p: &ProjectionMatrix,
    head: &InterpretableHead,
    rule: &ActiveRule,
) -> Result<SparsityReport> {
    let all: Vec<usize> = (0..p.nrows()).collect();
    count_active_concepts_on(p, head, rule, &all)
}

pub fn count_active_concepts_on(
    p: &ProjectionMatrix,
    head: &InterpretableHead,
    rule: &ActiveRule,
    indices: &[usize],
) -> Result<SparsityReport> {
    check_shapes(p, head)?;
    if !(rule.threshold > 0.0) {
        return Err(Error::InvalidConfig("threshold must be > 0".into()));
    }
    if indices.is_empty() {
        return Err(Error::EmptySplit("no samples to count".into()));
    }
    let eps = rule.threshold;
    let k = head.k();
    let used_column: Vec<bool> = (0..k)
        .map(|j| {
            head.linear
                .weights
                .column(j)
                .iter()
                .fold(0.0f64, |m, w| m.max(w.abs()))
                > eps
        })
        .collect();

    let mut counts = Vec::with_capacity(indices.len());
    for &i in indices {
        let row = p.row(i);
        let count = (0..k)
            .filter(|&j| {
                let gated = match &head.gate {
                    Some(g) => (row[j] - g.offsets[j]).max(0.0),
                    None => row[j].max(0.0),
                };
                (!rule.require_gate || gated > eps)
                    && (!rule.require_similarity || row[j].abs() > eps)
                    && (!rule.require_weight || used_column[j])
            })
            .count();
        counts.push(count);
    }

    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(SparsityReport {
        mean_active: mean,
        std_active: var.sqrt(),
        total_available: k,
        threshold: eps,
        per_sample_counts: counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    LambdaW,
    LambdaPi,
    Dropout,
}

impl SweepParam {
    pub fn apply(self, cfg: &TrainConfig, value: f64) -> TrainConfig {
        let mut cfg = cfg.clone();
        match self {
            SweepParam::LambdaW => cfg.lambda_w = value,
            SweepParam::LambdaPi => cfg.lambda_pi = value,
            SweepParam::Dropout => cfg.dropout_rate = value,
        }
        cfg
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "lambda_w" => Ok(SweepParam::LambdaW),
            "lambda_pi" => Ok(SweepParam::LambdaPi),
            "dropout" | "dropout_rate" => Ok(SweepParam::Dropout),
            _ => Err(Error::InvalidConfig(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::LambdaW => "lambda_w",
            SweepParam::LambdaPi => "lambda_pi",
            SweepParam::Dropout => "dropout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    /// Validation accuracy; `None` when training failed.
    pub accuracy: Option<f64>,
    pub mean_active: Option<f64>,
    pub std_active: Option<f64>,
    pub error: Option<String>,
}

/// Trains and evaluates one head per grid value (on the validation split,
/// with the seed of `base`). A failing grid point is recorded in its row and
/// does not stop the sweep.
pub fn sweep(
    p: &ProjectionMatrix,
    labels: &LabelVector,
    split: &DatasetSplit,
    base: &TrainConfig,
    param: SweepParam,
    values: &[f64],
    rule: &ActiveRule,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    Ok(values
        .iter()
        .map(|&value| {
            let cfg = param.apply(base, value);
            let outcome = fit(p, labels, split, &cfg).and_then(|(head, _)| {
                let acc = accuracy_on(p, labels, &head, &split.val)?;
                let sparsity = count_active_concepts_on(p, &head, rule, &split.val)?;
                Ok((acc, sparsity))
            });
            match outcome {
                Ok((acc, s)) => SweepRow {
                    param,
                    value,
                    accuracy: Some(acc),
                    mean_active: Some(s.mean_active),
                    std_active: Some(s.std_active),
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(%param, value, error = %e, "sweep point failed");
                    SweepRow {
                        param,
                        value,
                        accuracy: None,
                        mean_active: None,
                        std_active: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

pub const SWEEP_CSV_HEADER: &str = "param,value,accuracy,mean_active,std_active";

/// Renders sweep rows as CSV; failed points leave the metric cells empty.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let cell = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{},{},{}\n",
            r.param,
            r.value,
            cell(r.accuracy),
            cell(r.mean_active),
            cell(r.std_active)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GateParams, LinearHead};
    use crate::projection::ProjectionMode;
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};

    fn head(weights: Array2<f64>, offsets: Option<Array1<f64>>) -> InterpretableHead {
        let c = weights.nrows();
        InterpretableHead::new(
            offsets.map(|offsets| GateParams { offsets }),
            LinearHead {
                weights,
                bias: Array1::zeros(c),
            },
            ProjectionMode::Cosine,
        )
        .unwrap()
    }

    fn proj(v: Array2<f64>) -> ProjectionMatrix {
        ProjectionMatrix::from_values(v, ProjectionMode::Cosine).unwrap()
    }

    #[test]
    fn constant_class_zero() {
        let mut h = head(Array2::zeros((2, 2)), None);
        h.linear.bias = array![1.0, 0.0];
        let p = proj(array![[0.1, 0.2], [0.3, 0.4]]);
        let y = LabelVector::new(vec![0, 0], 2).unwrap();
        assert_eq!(evaluate(&p, &y, &h).unwrap(), 1.0);
    }

    #[test]
    fn random_head_on_balanced_labels_is_chance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let p = proj(Array2::from_shape_simple_fn((n, 4), || rng.random_range(0.0..1.0)));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let y = LabelVector::new(labels, 2).unwrap();
        let h = head(Array2::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0)), None);
        let acc = evaluate(&p, &y, &h).unwrap();
        // Labels are independent of the inputs: accuracy ~ Binomial(n, ½)/n, sd 0.005.
        assert!((acc - 0.5).abs() < 0.02, "{acc}");
    }

    #[test]
    fn empty_eval_set() {
        let h = head(Array2::zeros((2, 2)), None);
        let p = proj(array![[0.1, 0.2]]);
        let y = LabelVector::new(vec![0], 2).unwrap();
        assert!(matches!(accuracy_on(&p, &y, &h, &[]), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn null_weight_column_never_counts() {
        let h = head(array![[1.0, 0.0], [1.0, 0.0]], Some(array![0.0, 0.0]));
        let r = count_active_concepts(&proj(array![[0.5, 0.9], [0.2, 0.7]]), &h, &ActiveRule::default()).unwrap();
        assert_eq!(r.per_sample_counts, vec![1, 1]);
    }

    #[test]
    fn saturated_gate_counts_nothing() {
        let h = head(array![[1.0, 1.0]], Some(array![10.0, 10.0]));
        let r = count_active_concepts(&proj(array![[0.5, 0.9]]), &h, &ActiveRule::default()).unwrap();
        assert_eq!(r.mean_active, 0.0);
    }

    #[test]
    fn three_condition_rule_by_hand() {
        // Concept 0 is gated off (0.3 − 0.5 < 0), concept 1 has zero
        // similarity, concept 2 passes all three conditions.
        let h = head(array![[1.0, 1.0, 1.0], [0.5, -0.5, 0.2]], Some(array![0.5, 0.0, 0.1]));
        let p = proj(array![[0.3, 0.0, 0.4], [0.2, 0.0, 0.9]]);
        let r = count_active_concepts(&p, &h, &ActiveRule::default()).unwrap();
        assert_eq!(r.per_sample_counts, vec![1, 1]);
        assert_eq!(r.mean_active, 1.0);
        assert_eq!(r.std_active, 0.0);
        assert_eq!(r.total_available, 3);

        let loose = ActiveRule {
            require_gate: false,
            ..ActiveRule::default()
        };
        assert_eq!(count_active_concepts(&p, &h, &loose).unwrap().per_sample_counts, vec![2, 2]);
    }

    #[test]
    fn gate_free_uses_positive_part() {
        let h = head(array![[1.0, 1.0]], None);
        let r = count_active_concepts(&proj(array![[-0.5, 0.5]]), &h, &ActiveRule::default()).unwrap();
        assert_eq!(r.per_sample_counts, vec![1]);
    }

    #[test]
    fn csv_rendering() {
        let rows = vec![
            SweepRow {
                param: SweepParam::LambdaPi,
                value: 1e-3,
                accuracy: Some(0.75),
                mean_active: Some(3.5),
                std_active: Some(0.5),
                error: None,
            },
            SweepRow {
                param: SweepParam::LambdaPi,
                value: 0.1,
                accuracy: None,
                mean_active: None,
                std_active: None,
                error: Some("boom".into()),
            },
        ];
        assert_eq!(
            sweep_to_csv(&rows),
            "param,value,accuracy,mean_active,std_active\nlambda_pi,0.001,0.75,3.5,0.5\nlambda_pi,0.1,,,\n"
        );
    }

    #[test]
    fn sweep_records_failures_without_aborting() {
        let p = proj(array![[0.9, 0.1], [0.1, 0.9], [0.8, 0.2], [0.2, 0.8]]);
        let y = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
        let split = DatasetSplit {
            train: vec![0, 1],
            val: vec![2, 3],
            test: vec![],
        };
        let base = TrainConfig {
            epochs: 2,
            lr0: 0.01,
            ..TrainConfig::default()
        };
        let rows = sweep(&p, &y, &split, &base, SweepParam::Dropout, &[0.1, 1.5, 0.1], &ActiveRule::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.is_some());
        assert_eq!(rows[0], rows[2]);
        assert!(sweep(&p, &y, &split, &base, SweepParam::Dropout, &[], &ActiveRule::default()).is_err());
    }
}
