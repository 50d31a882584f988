//! Seeded synthetic data with a known sparse concept structure.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discovery::{discover, DiscoveryConfig, DiscoveryMethod, DiscoveryResult};
use crate::editing::{EditProposal, ProposalSource, WeightEdit};
use crate::error::{Error, Result};
use crate::model::{GateParams, InterpretableHead, LinearHead};
use crate::projection::{project, ProjectionMatrix, ProjectionMode};
use crate::rng::{stream, Stream};
use crate::tensor_io::{ActivationMatrix, DatasetSplit, LabelVector};
use crate::training::TrainConfig;

/// Shape of the generated classification task.
///
/// Every ground-truth concept is a nonnegative unit vector supported on
/// `support` coordinates and is owned by exactly one class. A sample of class
/// `y` mixes `own_per_sample` concepts owned by `y` with `distractors`
/// concepts from other classes plus uniform nonnegative noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_concepts: usize,
    pub dim: usize,
    pub support: usize,
    pub own_per_sample: usize,
    pub distractors: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 2500,
            n_classes: 5,
            n_concepts: 50,
            dim: 64,
            support: 6,
            own_per_sample: 3,
            distractors: 1,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n_concepts < self.n_classes || !self.n_concepts.is_multiple_of(self.n_classes) {
            return bad("n_concepts must be a positive multiple of n_classes");
        }
        if self.support == 0 || self.support > self.dim {
            return bad("support must be in 1..=dim");
        }
        if self.own_per_sample == 0 || self.own_per_sample > self.n_concepts / self.n_classes {
            return bad("own_per_sample must be in 1..=concepts per class");
        }
        if self.distractors > self.n_concepts - self.n_concepts / self.n_classes {
            return bad("too many distractors");
        }
        if self.n_samples < 5 {
            return bad("n_samples must be at least 5");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub activations: ActivationMatrix,
    pub labels: LabelVector,
    /// 60/20/20 split over a seeded permutation.
    pub split: DatasetSplit,
    /// `dim × n_concepts`, unit-norm columns.
    pub ground_truth: Array2<f64>,
    /// Owning class of each ground-truth concept.
    pub concept_class: Vec<usize>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Synthetic);
    let per_class = cfg.n_concepts / cfg.n_classes;

    let mut ground_truth = Array2::zeros((cfg.dim, cfg.n_concepts));
    let mut dims: Vec<usize> = (0..cfg.dim).collect();
    for j in 0..cfg.n_concepts {
        dims.shuffle(&mut rng);
        let mut col = ground_truth.column_mut(j);
        for &d in &dims[..cfg.support] {
            col[d] = rng.random_range(0.5..1.5);
        }
        let norm = col.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        col /= norm;
    }
    let concept_class: Vec<usize> = (0..cfg.n_concepts).map(|j| j / per_class).collect();

    let mut data = Array2::zeros((cfg.n_samples, cfg.dim));
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let mut own: Vec<usize> = (0..per_class).collect();
    let mut foreign: Vec<usize> = Vec::with_capacity(cfg.n_concepts - per_class);
    for i in 0..cfg.n_samples {
        let y = i % cfg.n_classes;
        labels.push(y);
        own.shuffle(&mut rng);
        foreign.clear();
        foreign.extend((0..cfg.n_concepts).filter(|&j| concept_class[j] != y));
        foreign.shuffle(&mut rng);
        let mut coeffs = Array1::<f64>::zeros(cfg.n_concepts);
        for &o in &own[..cfg.own_per_sample] {
            coeffs[y * per_class + o] = rng.random_range(0.5..1.5);
        }
        for &f in &foreign[..cfg.distractors] {
            coeffs[f] = rng.random_range(0.5..1.5);
        }
        let mut row = data.row_mut(i);
        row.assign(&ground_truth.dot(&coeffs));
        for v in row.iter_mut() {
            *v += cfg.noise * rng.random::<f64>();
        }
    }

    let mut order: Vec<usize> = (0..cfg.n_samples).collect();
    order.shuffle(&mut rng);
    let n_train = cfg.n_samples * 3 / 5;
    let n_val = cfg.n_samples / 5;
    let split = DatasetSplit {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };

    Ok(SyntheticTask {
        activations: ActivationMatrix::new(data)?,
        labels: LabelVector::new(labels, cfg.n_classes)?,
        split,
        ground_truth,
        concept_class,
    })
}

/// NMF iteration budget for the synthetic pipeline.
pub const DISCOVERY_ITERS: usize = 500;

/// Training settings tuned for the synthetic task; note the gate penalty is
/// far above the library default.
pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lambda_pi: 0.05,
        lr0: 0.05,
        epochs: 100,
        batch_size: 64,
        seed,
        ..TrainConfig::default()
    }
}

/// NMF with `k` concepts followed by cosine projection.
pub fn discover_and_project(
    task: &SyntheticTask,
    k: usize,
    seed: u64,
) -> Result<(DiscoveryResult, ProjectionMatrix)> {
    let cfg = DiscoveryConfig {
        max_iters: DISCOVERY_ITERS,
        seed,
        ..DiscoveryConfig::new(k, DiscoveryMethod::Nmf)
    };
    let found = discover(&task.activations, &cfg)?;
    let p = project(&task.activations, &found.dictionary, ProjectionMode::Cosine)?;
    Ok((found, p))
}

/// `U·Vᵀ` with `U` (`n × rank`) and `V` (`p × rank`) drawn uniformly from
/// `[0, 1)`; the result is nonnegative with rank at most `rank`.
pub fn low_rank_nonnegative(n: usize, p: usize, rank: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, Stream::Synthetic);
    let u = Array2::from_shape_simple_fn((n, rank), || rng.random::<f64>());
    let v = Array2::from_shape_simple_fn((p, rank), || rng.random::<f64>());
    u.dot(&v.t())
}

/// A hand-sized editing problem whose set of good `β` is known in closed form.
#[derive(Debug, Clone)]
pub struct EditingInstance {
    pub head: InterpretableHead,
    pub projections: ProjectionMatrix,
    pub labels: LabelVector,
    /// Row of `projections` that the head gets wrong.
    pub target: usize,
    pub proposal: EditProposal,
    /// The target flips for `β > lower`; some other sample breaks for
    /// `β > upper`.
    pub window: (f64, f64),
}

/// Two classes, two concepts, identity weights, zero offsets. The proposal
/// raises `W[0, 0]` by 1, so class 0's logit on a row `(a, b)` becomes
/// `a·(1 + β)`. The target `(0.4, 0.61)` of class 0 flips once
/// `β > 0.525`; the class-1 row `(0.3, 0.55)` breaks once `β > 5/6`.
pub fn editing_instance() -> Result<EditingInstance> {
    let head = InterpretableHead::new(
        Some(GateParams::zeros(2)),
        LinearHead {
            weights: Array2::eye(2),
            bias: Array1::zeros(2),
        },
        ProjectionMode::DotUnitConcept,
    )?;
    let rows = ndarray::arr2(&[
        [0.4, 0.61],
        [0.3, 0.55],
        [0.9, 0.1],
        [0.1, 0.9],
        [0.2, 0.7],
        [0.6, 0.2],
    ]);
    let labels = LabelVector::new(vec![0, 1, 0, 1, 1, 0], 2)?;
    let proposal = EditProposal::new(
        vec![WeightEdit {
            class: 0,
            concept: 0,
            delta: 1.0,
        }],
        ProposalSource::Stub,
    );
    Ok(EditingInstance {
        head,
        projections: ProjectionMatrix::from_values(rows, ProjectionMode::DotUnitConcept)?,
        labels,
        target: 0,
        proposal,
        window: (0.525, 5.0 / 6.0),
    })
}
