//! Text payload describing a misclassification, for a vision-language
//! model that is asked to propose weight edits.

use std::fmt::Write;

use crate::analysis::{ClassExplanation, ContributionEntry, ExplanationReport};
use crate::error::{Error, Result};

const INTRO: &str = "The image from above (first image) gives the following output if we are putting them into a trained concept bottleneck model.";
const CONTRIBUTION_NOTE: &str =
    "The concept contribution therefore is the concept similarity times the weight from the concept and the specific class.";
const SIMILARITY_HEADER: &str = "The pure concept similarities are given by:";
const LABEL_HEADER: &str = "The concepts are representing the following:";
const REQUEST: &str = "Furthermore, the layer from the concept similarities to the prediction is a linear layer. Which weights (concept and class) should I adjust by how much in order to get a correct classification for this image? But be aware to not to change any other classifications. Please give me an answer in case of 'increase/decrease weight of class i and concept i by x'.";
const NO_ACTIVE: &str = "(no active concepts)";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    /// Human-readable class names indexed by class; empty means `class <i>`.
    pub class_names: Vec<String>,
    /// Number of logits and contributions listed per section.
    pub top: usize,
}

impl Default for PromptContext {
    fn default() -> Self {
        Self {
            class_names: Vec::new(),
            top: 5,
        }
    }
}

impl PromptContext {
    fn class_name(&self, c: usize) -> Result<String> {
        if self.class_names.is_empty() {
            return Ok(format!("class {c}"));
        }
        self.class_names
            .get(c)
            .cloned()
            .ok_or_else(|| Error::MissingField(format!("name of class {c}")))
    }
}

fn count_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

/// Builds the prompt for a misclassified sample. The report must carry the
/// true class and explanations for both the true and the predicted class.
///
/// Contributions are printed with 4 decimals, weights and logits with 2, and
/// similarities (the gated values whose product with the weight gives the
/// contribution) at full precision. Concepts without a label print as `?`.
pub fn build_prompt(report: &ExplanationReport, ctx: &PromptContext) -> Result<String> {
    let truth = report
        .true_class
        .ok_or_else(|| Error::MissingField("true_class".into()))?;
    let predicted = report.predicted_class;
    let class_entry = |c: usize| -> Result<&ClassExplanation> {
        report
            .class(c)
            .ok_or_else(|| Error::MissingField(format!("explanation for class {c}")))
    };
    let truth_entry = class_entry(truth)?;
    let pred_entry = class_entry(predicted)?;
    let truth_name = ctx.class_name(truth)?;
    let pred_name = ctx.class_name(predicted)?;
    let top_word = count_word(ctx.top);

    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "{INTRO}").unwrap();
    writeln!(w).unwrap();
    writeln!(w, "Ground truth: {truth_name}").unwrap();
    writeln!(w, "Prediction: {pred_name}").unwrap();
    writeln!(
        w,
        "So the model predicted class {pred_name}, but it should be class {truth_name}"
    )
    .unwrap();
    writeln!(w).unwrap();

    writeln!(w, "Biggest {top_word} final model outputs sorted by size:").unwrap();
    let mut order: Vec<usize> = (0..report.logits.len()).collect();
    order.sort_by(|&a, &b| report.logits[b].total_cmp(&report.logits[a]).then(a.cmp(&b)));
    for &c in order.iter().take(ctx.top) {
        writeln!(w, "Class {}: {:.2}", ctx.class_name(c)?, report.logits[c]).unwrap();
    }
    writeln!(w).unwrap();

    let sections = [
        ("ground truth", &truth_name, truth_entry),
        ("predicted", &pred_name, pred_entry),
    ];
    let mut listed: Vec<&ContributionEntry> = Vec::new();
    for (role, name, entry) in sections {
        writeln!(
            w,
            "Largest {top_word} concept contributions (by absolute value) for {role} class {name} sorted by size (and their weight in the final linear layer):"
        )
        .unwrap();
        let top: Vec<&ContributionEntry> = entry.top.iter().take(ctx.top).collect();
        if top.is_empty() {
            writeln!(w, "{NO_ACTIVE}").unwrap();
        }
        for e in top {
            writeln!(w, "Concept {}: {:.4} ({:.2})", e.concept, e.contribution, e.weight).unwrap();
            if !listed.iter().any(|l| l.concept == e.concept) {
                listed.push(e);
            }
        }
        writeln!(w).unwrap();
    }

    writeln!(w, "{CONTRIBUTION_NOTE}").unwrap();
    writeln!(w, "{SIMILARITY_HEADER}").unwrap();
    if listed.is_empty() {
        writeln!(w, "{NO_ACTIVE}").unwrap();
    }
    for e in &listed {
        writeln!(w, "Concept {}: {}", e.concept, e.gated_value).unwrap();
    }
    writeln!(w).unwrap();

    writeln!(w, "{LABEL_HEADER}").unwrap();
    if listed.is_empty() {
        writeln!(w, "{NO_ACTIVE}").unwrap();
    }
    for e in &listed {
        writeln!(w, "Concept {}: {}", e.concept, e.label.as_deref().unwrap_or("?")).unwrap();
    }
    writeln!(w).unwrap();

    write!(w, "{REQUEST}").unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(concept: usize, contribution: f64, weight: f64) -> ContributionEntry {
        ContributionEntry {
            concept,
            label: None,
            raw_similarity: contribution / weight,
            gated_value: contribution / weight,
            weight,
            contribution,
        }
    }

    fn report(truth: Option<usize>) -> ExplanationReport {
        ExplanationReport {
            sample_id: "0".into(),
            predicted_class: 1,
            true_class: truth,
            logits: vec![0.5, 1.0, -1.0],
            classes: vec![
                ClassExplanation {
                    class: 1,
                    logit: 1.0,
                    bias: 0.5,
                    total_contribution: 0.5,
                    top: vec![entry(2, 0.5, 0.25)],
                },
                ClassExplanation {
                    class: 0,
                    logit: 0.5,
                    bias: 0.5,
                    total_contribution: 0.0,
                    top: vec![],
                },
            ],
        }
    }

    #[test]
    fn missing_truth() {
        assert!(matches!(
            build_prompt(&report(None), &PromptContext::default()),
            Err(Error::MissingField(_))
        ));
    }

    #[test]
    fn empty_contributions_get_a_note() {
        let text = build_prompt(&report(Some(0)), &PromptContext::default()).unwrap();
        assert!(text.contains(
            "for ground truth class class 0 sorted by size (and their weight in the final linear layer):\n(no active concepts)\n"
        ));
        assert!(text.contains("Concept 2: 0.5000 (0.25)"));
        assert!(text.contains("Concept 2: ?"));
        assert!(text.contains("Biggest five final model outputs"));
    }

    #[test]
    fn missing_class_name() {
        let ctx = PromptContext {
            class_names: vec!["a".into()],
            top: 5,
        };
        assert!(matches!(build_prompt(&report(Some(0)), &ctx), Err(Error::MissingField(_))));
    }
}
