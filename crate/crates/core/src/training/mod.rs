//! Fitting the gated sparse head.
//!
//! The objective per minibatch is mean cross-entropy plus an elastic-net
//! penalty on the gate outputs (`λ_π`) and on the weights (`λ_w`). It is
//! minimized with Adam under a cosine-annealed learning rate; after every
//! step the gate offsets are projected back onto `o ≥ 0`. The head with the
//! best validation accuracy (later epoch on ties) is returned.

mod loss;
mod optim;

use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::accuracy_on;
use crate::error::{Error, Result};
use crate::model::InterpretableHead;
use crate::projection::ProjectionMatrix;
use crate::rng::{self, Stream};
use crate::tensor_io::{DatasetSplit, LabelVector};

pub use loss::{elastic_net, elastic_net_grad, loss, sample_dropout_mask, Gradients, LossBreakdown};
pub use optim::{Adam, CosineSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_w: f64,
    /// Gate-output penalty. The penalty is averaged over the batch, so this
    /// is `1/n` times the strength of a summed penalty.
    pub lambda_pi: f64,
    pub alpha: f64,
    pub dropout_rate: f64,
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub frobenius_squared: bool,
    /// Train with the concept-selection gate. Without it the head is a plain
    /// elastic-net linear model on the similarities.
    pub gated: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_w: 1e-4,
            lambda_pi: 2e-5,
            alpha: 0.99,
            dropout_rate: 0.2,
            lr0: 1e-3,
            epochs: 100,
            batch_size: 512,
            seed: 0,
            frobenius_squared: true,
            gated: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("lambda_w", self.lambda_w)?;
        nonneg("lambda_pi", self.lambda_pi)?;
        nonneg("lr0", self.lr0)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub cross_entropy: f64,
    pub gate_penalty: f64,
    pub weight_penalty: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Accuracies of the returned (best-validation) head.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub epochs_run: usize,
    pub seed: u64,
}

pub fn fit(
    p: &ProjectionMatrix,
    labels: &LabelVector,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(InterpretableHead, TrainReport)> {
    cfg.validate()?;
    let n = p.nrows();
    if labels.len() != n {
        return Err(Error::DimMismatch(format!(
            "{n} similarity rows but {} labels",
            labels.len()
        )));
    }
    split.validate(n)?;
    if split.train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if split.val.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }

    let k = p.k();
    let mut head = InterpretableHead::init(k, labels.num_classes(), cfg.gated, p.mode());
    let mut adam_w = Adam::new(head.linear.weights.len());
    let mut adam_b = Adam::new(head.linear.bias.len());
    let mut adam_o = Adam::new(k);

    let batch_size = cfg.batch_size.min(split.train.len());
    let batches_per_epoch = split.train.len().div_ceil(batch_size);
    let schedule = CosineSchedule {
        lr0: cfg.lr0,
        total_steps: cfg.epochs * batches_per_epoch,
    };

    let mut order = split.train.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, InterpretableHead)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.copy_from_slice(&split.train);
        order.shuffle(&mut rng::stream(cfg.seed, Stream::Shuffle { epoch: epoch as u32 }));

        let mut sums = LossBreakdown::default();
        for (batch_idx, idx) in order.chunks(batch_size).enumerate() {
            let rows = p.values().select(Axis(0), idx);
            let ys: Vec<usize> = idx.iter().map(|&i| labels.labels()[i]).collect();
            let mask = (cfg.dropout_rate > 0.0).then(|| {
                let mut rng = rng::stream(
                    cfg.seed,
                    Stream::Dropout {
                        epoch: epoch as u32,
                        batch: batch_idx as u32,
                    },
                );
                sample_dropout_mask(&mut rng, idx.len(), k, cfg.dropout_rate)
            });

            let (l, grads) = loss(rows.view(), &ys, &head, cfg, mask.as_ref().map(|m| m.view()))
                .map_err(|e| match e {
                    Error::Diverged { .. } => Error::Diverged { step },
                    other => other,
                })?;
            let w = idx.len() as f64;
            sums.total += l.total * w;
            sums.cross_entropy += l.cross_entropy * w;
            sums.gate_penalty += l.gate_penalty * w;
            sums.weight_penalty += l.weight_penalty * w;

            let lr = schedule.lr(step);
            step += 1;
            let t = step as u64;
            adam_w.step(
                head.linear.weights.as_slice_mut().expect("standard layout"),
                grads.weights.as_slice().expect("standard layout"),
                lr,
                t,
            );
            adam_b.step(
                head.linear.bias.as_slice_mut().expect("contiguous"),
                grads.bias.as_slice().expect("contiguous"),
                lr,
                t,
            );
            if let (Some(gate), Some(g)) = (head.gate.as_mut(), grads.offsets.as_ref()) {
                adam_o.step(
                    gate.offsets.as_slice_mut().expect("contiguous"),
                    g.as_slice().expect("contiguous"),
                    lr,
                    t,
                );
                gate.clamp();
            }
        }

        let count = split.train.len() as f64;
        let train_accuracy = accuracy_on(p, labels, &head, &split.train)?;
        let val_accuracy = accuracy_on(p, labels, &head, &split.val)?;
        history.push(EpochRecord {
            epoch,
            total: sums.total / count,
            cross_entropy: sums.cross_entropy / count,
            gate_penalty: sums.gate_penalty / count,
            weight_penalty: sums.weight_penalty / count,
            train_accuracy,
            val_accuracy,
        });
        tracing::debug!(epoch, loss = sums.total / count, val_accuracy, "epoch done");

        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy >= *acc) {
            best = Some((val_accuracy, epoch, head.clone()));
        }
    }

    let (_, best_epoch, best_head) = best.expect("at least one epoch");
    let record = &history[best_epoch];
    let report = TrainReport {
        best_epoch,
        train_accuracy: record.train_accuracy,
        val_accuracy: record.val_accuracy,
        epochs_run: history.len(),
        seed: cfg.seed,
        history,
    };
    Ok((best_head, report))
}
