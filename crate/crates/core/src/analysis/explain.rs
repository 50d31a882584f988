use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::discovery::ConceptDictionary;
use crate::error::{Error, Result};
use crate::model::{argmax, contributions, forward, InterpretableHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEntry {
    pub concept: usize,
    pub label: Option<String>,
    pub raw_similarity: f64,
    pub gated_value: f64,
    pub weight: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub class: usize,
    pub logit: f64,
    pub bias: f64,
    /// Sum of the contributions of all `k` concepts (not only `top`).
    pub total_contribution: f64,
    /// Non-zero contributions ranked by absolute value.
    pub top: Vec<ContributionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub sample_id: String,
    pub predicted_class: usize,
    pub true_class: Option<usize>,
    pub logits: Vec<f64>,
    /// The predicted class first, then the true class when it differs.
    pub classes: Vec<ClassExplanation>,
}

impl ExplanationReport {
    pub fn class(&self, c: usize) -> Option<&ClassExplanation> {
        self.classes.iter().find(|e| e.class == c)
    }

    /// Largest deviation between `total_contribution + bias` and the logit.
    pub fn max_decomposition_error(&self) -> f64 {
        self.classes
            .iter()
            .map(|e| (e.total_contribution + e.bias - e.logit).abs())
            .fold(0.0, f64::max)
    }
}

/// Explains one sample's prediction by ranking concept contributions
/// `W[c, j]·π_j` for the predicted class (and the true class, if given).
pub fn explain(
    sample_id: impl Into<String>,
    p_row: ArrayView1<f64>,
    head: &InterpretableHead,
    dict: &ConceptDictionary,
    top_m: usize,
    true_class: Option<usize>,
) -> Result<ExplanationReport> {
    if dict.k() != head.k() {
        return Err(Error::DimMismatch(format!(
            "dictionary has {} concepts, head has {}",
            dict.k(),
            head.k()
        )));
    }
    if top_m > head.k() {
        return Err(Error::InvalidConfig(format!(
            "top_m = {top_m} exceeds k = {}",
            head.k()
        )));
    }
    if let Some(y) = true_class {
        if y >= head.num_classes() {
            return Err(Error::IndexOutOfRange {
                what: "class",
                index: y as i64,
                bound: head.num_classes(),
            });
        }
    }

    let logits = forward(p_row, head, None)?;
    let contrib = contributions(p_row, head)?;
    let gated = head.gated(p_row)?;
    let predicted = argmax(logits.view());

    let mut classes = vec![predicted];
    if let Some(y) = true_class.filter(|&y| y != predicted) {
        classes.push(y);
    }

    let explanations = classes
        .into_iter()
        .map(|c| {
            let row = contrib.row(c);
            let mut order: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
            order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
            order.truncate(top_m);
            ClassExplanation {
                class: c,
                logit: logits[c],
                bias: head.linear.bias[c],
                total_contribution: row.sum(),
                top: order
                    .into_iter()
                    .map(|j| ContributionEntry {
                        concept: j,
                        label: dict.label(j).map(str::to_string),
                        raw_similarity: p_row[j],
                        gated_value: gated[j],
                        weight: head.linear.weights[[c, j]],
                        contribution: row[j],
                    })
                    .collect(),
            }
        })
        .collect();

    Ok(ExplanationReport {
        sample_id: sample_id.into(),
        predicted_class: predicted,
        true_class,
        logits: logits.to_vec(),
        classes: explanations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::DiscoveryMethod;
    use crate::model::{GateParams, LinearHead};
    use crate::projection::ProjectionMode;
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};

    fn identity_dict(k: usize) -> ConceptDictionary {
        ConceptDictionary::new(Array2::eye(k), DiscoveryMethod::Pca, false).unwrap()
    }

    fn head(weights: Array2<f64>, bias: Array1<f64>, offsets: Array1<f64>) -> InterpretableHead {
        InterpretableHead::new(
            Some(GateParams { offsets }),
            LinearHead { weights, bias },
            ProjectionMode::Cosine,
        )
        .unwrap()
    }

    #[test]
    fn single_active_concept() {
        let h = head(
            array![[2.0, 1.0, 1.0], [0.0, 0.5, 0.0]],
            array![0.3, 0.1],
            array![0.5, 0.5, 0.5],
        );
        let r = explain("s", array![0.9, 0.1, 0.2].view(), &h, &identity_dict(3), 2, None).unwrap();
        let e = &r.classes[0];
        assert_eq!(r.predicted_class, 0);
        assert_eq!(e.top.len(), 1);
        assert_eq!(e.top[0].concept, 0);
        assert!((e.top[0].contribution - (e.logit - e.bias)).abs() < 1e-15);
    }

    #[test]
    fn all_gated_off() {
        let h = head(array![[1.0, 1.0], [2.0, 0.0]], array![0.0, 1.0], array![1.0, 1.0]);
        let r = explain("s", array![0.2, 0.3].view(), &h, &identity_dict(2), 2, Some(0)).unwrap();
        assert_eq!(r.logits, vec![0.0, 1.0]);
        assert!(r.classes.iter().all(|e| e.top.is_empty()));
        assert_eq!(r.classes.len(), 2);
    }

    #[test]
    fn ranking_matches_resort_of_contribution_matrix() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let k = 6;
        let weights = Array2::from_shape_simple_fn((3, k), || rng.random_range(-1.0..1.0));
        let bias = Array1::from_shape_simple_fn(3, || rng.random_range(-0.5..0.5));
        let offsets = Array1::from_shape_simple_fn(k, || rng.random_range(0.0..0.3));
        let p = Array1::from_shape_simple_fn(k, || rng.random_range(0.0..1.0));
        let h = head(weights.clone(), bias.clone(), offsets.clone());
        let r = explain("s", p.view(), &h, &identity_dict(k), k, None).unwrap();

        // Independent recomputation of W[c, j]·max(0, p_j − o_j).
        let c = r.predicted_class;
        let mut expected: Vec<(usize, f64)> = (0..k)
            .map(|j| (j, weights[[c, j]] * (p[j] - offsets[j]).max(0.0)))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        expected.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
        let got: Vec<usize> = r.classes[0].top.iter().map(|e| e.concept).collect();
        let want: Vec<usize> = expected.iter().map(|e| e.0).collect();
        assert_eq!(got, want);
        assert!(r.max_decomposition_error() < 1e-12);
    }

    #[test]
    fn errors() {
        let h = head(array![[1.0, 1.0], [2.0, 0.0]], array![0.0, 1.0], array![0.0, 0.0]);
        let p = array![0.2, 0.3];
        assert!(explain("s", p.view(), &h, &identity_dict(3), 2, None).is_err());
        assert!(explain("s", p.view(), &h, &identity_dict(2), 3, None).is_err());
        assert!(explain("s", p.view(), &h, &identity_dict(2), 2, Some(5)).is_err());
    }
}
