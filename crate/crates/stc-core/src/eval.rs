//! Evaluation and test-time selection: Pass@N, majority voting, critique-
//! guided best-of-K, and critique-quality metrics.
//!
//! Selection is deterministic: answers group into equivalence classes under
//! exact verifier equality, count ties break toward the class whose smallest
//! canonical rendering is lexicographically least, and the returned
//! representative is the first-seen member of the winning class.

use crate::verifier::{answers_equal, CanonicalAnswer};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("requested n={requested} exceeds available samples n={available}")]
    NotEnoughSamples { requested: usize, available: usize },
    #[error("no sample has a present answer")]
    AllAnswersAbsent,
    #[error("prediction and label lists differ in length: {preds} vs {labels}")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no scored items")]
    Empty,
    #[error("sample set is empty")]
    NoProblems,
}

/// One sampled completion for a problem.
#[derive(Debug, Clone)]
pub struct Sample {
    pub answer: Option<CanonicalAnswer>,
    /// Final-step critique score; absent counts as 0 for selection.
    pub final_score: Option<u8>,
    /// Predicted per-step scores, when process metrics are wanted.
    pub step_scores: Option<Vec<u8>>,
    /// Gold per-step labels from the environment or an external judge.
    pub gold_step_labels: Option<Vec<u8>>,
}

/// All samples drawn for one problem plus its gold answer.
#[derive(Debug, Clone)]
pub struct ProblemSamples {
    pub problem_id: String,
    pub gold: CanonicalAnswer,
    pub samples: Vec<Sample>,
}

impl ProblemSamples {
    fn correct_flags(&self) -> Vec<bool> {
        self.samples
            .iter()
            .map(|s| {
                s.answer
                    .as_ref()
                    .is_some_and(|a| answers_equal(a, &self.gold))
            })
            .collect()
    }
}

/// Pass@1 is the mean per-sample correctness; Pass@n for n > 1 is the
/// fraction of problems with at least one correct answer among the first n
/// samples. Aggregation over problems is by mean.
pub fn pass_at_n(problems: &[ProblemSamples], n: usize) -> Result<f64, EvalError> {
    if problems.is_empty() {
        return Err(EvalError::NoProblems);
    }
    let mut total = 0.0f64;
    for p in problems {
        if n > p.samples.len() {
            return Err(EvalError::NotEnoughSamples {
                requested: n,
                available: p.samples.len(),
            });
        }
        let flags = p.correct_flags();
        total += if n == 1 {
            flags.iter().filter(|c| **c).count() as f64 / flags.len() as f64
        } else {
            f64::from(flags[..n].iter().any(|c| *c))
        };
    }
    Ok(total / problems.len() as f64)
}

/// Groups present answers into verifier-equality classes.
/// Returns (first-seen representative, count, smallest rendering) per class.
fn answer_classes(answers: &[&CanonicalAnswer]) -> Vec<(CanonicalAnswer, usize, String)> {
    let mut classes: Vec<(CanonicalAnswer, usize, String)> = Vec::new();
    for answer in answers {
        match classes
            .iter_mut()
            .find(|(rep, _, _)| answers_equal(rep, answer))
        {
            Some((_, count, min_render)) => {
                *count += 1;
                let render = answer.to_string();
                if render < *min_render {
                    *min_render = render;
                }
            }
            None => classes.push(((*answer).clone(), 1, answer.to_string())),
        }
    }
    classes
}

fn plurality(answers: &[&CanonicalAnswer]) -> Result<CanonicalAnswer, EvalError> {
    if answers.is_empty() {
        return Err(EvalError::AllAnswersAbsent);
    }
    let classes = answer_classes(answers);
    let winner = classes
        .into_iter()
        .max_by(|(_, ca, ra), (_, cb, rb)| ca.cmp(cb).then_with(|| rb.cmp(ra)))
        .expect("non-empty classes");
    Ok(winner.0)
}

/// Most frequent answer under exact equivalence; absent answers excluded;
/// count ties break to the lexicographically smallest canonical rendering.
pub fn majority_vote(samples: &[Sample]) -> Result<CanonicalAnswer, EvalError> {
    let present: Vec<&CanonicalAnswer> =
        samples.iter().filter_map(|s| s.answer.as_ref()).collect();
    plurality(&present)
}

/// Majority vote restricted to samples whose final critique score is 1,
/// falling back to a plain majority vote when that subset is empty.
pub fn best_of_k_critique(samples: &[Sample]) -> Result<CanonicalAnswer, EvalError> {
    let endorsed: Vec<&CanonicalAnswer> = samples
        .iter()
        .filter(|s| s.final_score == Some(1))
        .filter_map(|s| s.answer.as_ref())
        .collect();
    if endorsed.is_empty() {
        majority_vote(samples)
    } else {
        plurality(&endorsed)
    }
}

/// Confusion counts with positive class = "correct".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// F1, precision, recall, and specificity over binary predictions.
/// Specificity is undefined (None) when there are no true negatives to
/// measure (tn + fp = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: Option<f64>,
    pub counts: ConfusionCounts,
}

pub fn critique_metrics(preds: &[u8], labels: &[u8]) -> Result<CritiqueMetrics, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, false) => counts.tn += 1,
            (false, true) => counts.fn_ += 1,
        }
    }
    let precision = if counts.tp + counts.fp == 0 {
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    };
    let recall = if counts.tp + counts.fn_ == 0 {
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let specificity = if counts.tn + counts.fp == 0 {
        None
    } else {
        Some(counts.tn as f64 / (counts.tn + counts.fp) as f64)
    };
    Ok(CritiqueMetrics {
        f1,
        precision,
        recall,
        specificity,
        counts,
    })
}

/// Configuration for synthetic selection ensembles: correlated wrong answers
/// judged by a critic of configurable accuracy. Used to study how selection
/// strategies scale with the sampling budget.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleConfig {
    /// Samples per problem (K).
    pub k: usize,
    /// Per-sample probability of producing the gold answer.
    pub p_correct: f64,
    /// Probability that a wrong sample repeats the problem's shared wrong
    /// answer instead of a fresh one (1.0 = fully correlated errors).
    pub wrong_correlation: f64,
    /// Probability that the final critique score matches true correctness.
    pub critique_accuracy: f64,
}

/// Draws one synthetic problem: K answers with correlated mistakes plus
/// noisy critique scores.
pub fn synthetic_ensemble<R: Rng>(cfg: &EnsembleConfig, rng: &mut R) -> ProblemSamples {
    let gold_value: i64 = rng.gen_range(10..100);
    let mut shared_wrong = gold_value;
    while shared_wrong == gold_value {
        shared_wrong = rng.gen_range(10..100);
    }
    let gold = CanonicalAnswer::Integer(gold_value.into());
    let mut samples = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let correct = rng.gen_bool(cfg.p_correct);
        let value = if correct {
            gold_value
        } else if rng.gen_bool(cfg.wrong_correlation) {
            shared_wrong
        } else {
            // A fresh wrong answer, distinct from gold.
            let mut v = gold_value + 100 + i as i64;
            if v == gold_value {
                v += 1;
            }
            v
        };
        let truthful = rng.gen_bool(cfg.critique_accuracy);
        let score = u8::from(correct == truthful);
        samples.push(Sample {
            answer: Some(CanonicalAnswer::Integer(value.into())),
            final_score: Some(score),
            step_scores: None,
            gold_step_labels: None,
        });
    }
    ProblemSamples {
        problem_id: String::new(),
        gold,
        samples,
    }
}
