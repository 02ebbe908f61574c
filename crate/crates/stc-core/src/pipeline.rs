//! SFT data synthesis: merge base-model reasoning traces with externally
//! produced stepwise critiques, keep only trajectories whose final critique
//! agrees with the rule-based verifier, and emit an interleaved corpus.
//!
//! The critique source is abstracted: a pre-computed annotations file, an
//! external command speaking a one-shot JSON request/response protocol
//! (request `{"problem": ..., "steps": [...]}`, response an annotation
//! record), or a deterministic stub that scores steps against supplied gold
//! intermediate values. Per-step disagreement is never a filter criterion;
//! only final-answer agreement is, and records with schema problems are
//! rejected with a reason instead of aborting the run.

use crate::records::{
    read_jsonl, write_jsonl, AnnotationRecord, GoldRecord, RecordError,
    TraceRecord,
};
use crate::trajectory::{parse_str, Critique, ParsedTrajectory, TraceMode, TraceStep};
use crate::verifier::{answers_equal, canonicalize, CanonicalAnswer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::Path;
use std::process::{Command, Stdio};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("step count mismatch: trace has {trace_steps}, annotation has {annotation_steps}")]
    StepCountMismatch {
        trace_steps: usize,
        annotation_steps: usize,
    },
    #[error("annotation justification contains critique tags")]
    MalformedAnnotation,
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("critique provider failed: {0}")]
    Provider(String),
}

/// Stepwise critique annotations for one trace.
#[derive(Debug, Clone)]
pub struct CritiqueAnnotation {
    pub problem_id: String,
    pub steps: Vec<(String, u8)>,
}

impl From<AnnotationRecord> for CritiqueAnnotation {
    fn from(r: AnnotationRecord) -> Self {
        Self {
            problem_id: r.problem_id,
            steps: r
                .steps
                .into_iter()
                .map(|s| (s.justification, s.score.min(1)))
                .collect(),
        }
    }
}

/// Source of stepwise critiques.
pub trait CritiqueProvider: Sync {
    fn annotate(
        &self,
        problem_id: &str,
        problem: &str,
        steps: &[String],
    ) -> Result<CritiqueAnnotation, PipelineError>;
}

/// Pre-computed annotations keyed by problem id.
pub struct FileAnnotations {
    by_id: BTreeMap<String, CritiqueAnnotation>,
}

impl FileAnnotations {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let records: Vec<AnnotationRecord> = read_jsonl(path)?;
        let mut by_id = BTreeMap::new();
        for r in records {
            by_id.insert(r.problem_id.clone(), CritiqueAnnotation::from(r));
        }
        Ok(Self { by_id })
    }
}

impl CritiqueProvider for FileAnnotations {
    fn annotate(
        &self,
        problem_id: &str,
        _problem: &str,
        _steps: &[String],
    ) -> Result<CritiqueAnnotation, PipelineError> {
        self.by_id
            .get(problem_id)
            .cloned()
            .ok_or_else(|| PipelineError::Provider(format!("no annotation for {problem_id}")))
    }
}

/// Deterministic stub: scores each step by comparing its last integer
/// literal to the expected gold value for that step (gold intermediates plus
/// the final answer). Compatible with the toy environment's trace layout.
pub struct StubProvider {
    expected: BTreeMap<String, Vec<i64>>,
}

impl StubProvider {
    /// Builds expectations from gold records: the per-step expected values
    /// are the gold intermediates followed by the final answer repeated for
    /// the answer-statement step.
    pub fn from_gold_records(records: &[GoldRecord]) -> Self {
        let mut expected = BTreeMap::new();
        for r in records {
            let mut values = r.gold_intermediates.clone().unwrap_or_default();
            if let Ok(final_value) = r.gold_answer.trim().parse::<i64>() {
                values.push(final_value);
            }
            expected.insert(r.problem_id.clone(), values);
        }
        Self { expected }
    }
}

fn last_integer(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let mut end = bytes.len();
    while end > 0 {
        if bytes[end - 1].is_ascii_digit() {
            let digits_end = end;
            let mut start = end;
            while start > 0 && bytes[start - 1].is_ascii_digit() {
                start -= 1;
            }
            let negative = start > 0 && bytes[start - 1] == b'-';
            let from = if negative { start - 1 } else { start };
            if let Ok(v) = text[from..digits_end].parse::<i64>() {
                return Some(v);
            }
            end = start;
        } else {
            end -= 1;
        }
    }
    None
}

impl CritiqueProvider for StubProvider {
    fn annotate(
        &self,
        problem_id: &str,
        _problem: &str,
        steps: &[String],
    ) -> Result<CritiqueAnnotation, PipelineError> {
        let expected = self
            .expected
            .get(problem_id)
            .ok_or_else(|| PipelineError::Provider(format!("no gold values for {problem_id}")))?;
        let steps = steps
            .iter()
            .enumerate()
            .map(|(i, step)| match (expected.get(i), last_integer(step)) {
                (Some(want), Some(got)) if *want == got => {
                    (format!("Matches the expected value {want}."), 1)
                }
                (Some(want), Some(got)) => {
                    (format!("Expected {want} but found {got}."), 0)
                }
                (Some(want), None) => (format!("No numeric result; expected {want}."), 0),
                (None, _) => ("No gold value available for this step.".to_string(), 0),
            })
            .collect();
        Ok(CritiqueAnnotation {
            problem_id: problem_id.to_string(),
            steps,
        })
    }
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    problem: &'a str,
    steps: &'a [String],
}

/// External command provider: writes the request JSON to the command's
/// stdin and reads an annotation record from its stdout.
pub struct CommandProvider {
    pub command: String,
}

impl CritiqueProvider for CommandProvider {
    fn annotate(
        &self,
        _problem_id: &str,
        problem: &str,
        steps: &[String],
    ) -> Result<CritiqueAnnotation, PipelineError> {
        let request = serde_json::to_string(&ProviderRequest {
            problem,
            steps,
        })
        .expect("request serializes");
        let mut child = Command::new(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| PipelineError::Provider(format!("spawn {}: {e}", self.command)))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(request.as_bytes())
            .map_err(|e| PipelineError::Provider(format!("write request: {e}")))?;
        let output = child
            .wait_with_output()
            .map_err(|e| PipelineError::Provider(format!("await provider: {e}")))?;
        if !output.status.success() {
            return Err(PipelineError::Provider(format!(
                "provider exited with {}",
                output.status
            )));
        }
        let record: AnnotationRecord = serde_json::from_slice(&output.stdout)
            .map_err(|e| PipelineError::Provider(format!("bad response: {e}")))?;
        Ok(record.into())
    }
}

/// Replaces each step's critique with the annotated one. Requires matching
/// step counts; the output renders in canonical full format (structure is
/// rebuilt by re-parsing that rendering).
pub fn merge_critiques(
    trace: &ParsedTrajectory,
    annotation: &CritiqueAnnotation,
) -> Result<ParsedTrajectory, PipelineError> {
    if trace.step_count() != annotation.steps.len() {
        return Err(PipelineError::StepCountMismatch {
            trace_steps: trace.step_count(),
            annotation_steps: annotation.steps.len(),
        });
    }
    for (justification, _) in &annotation.steps {
        if justification.contains("</critic>") || justification.contains("<critic>") {
            return Err(PipelineError::MalformedAnnotation);
        }
    }
    let steps: Vec<TraceStep> = trace
        .steps()
        .iter()
        .zip(&annotation.steps)
        .map(|(step, (justification, score))| {
            TraceStep::new(
                step.reasoning.clone(),
                Some(Critique::well_formed(justification.clone(), *score == 1)),
            )
        })
        .collect();
    let rendered = ParsedTrajectory::from_steps(steps).render(TraceMode::Full);
    parse_str(&rendered).map_err(|_| PipelineError::Provider("empty merged trace".into()))
}

/// Why a record was discarded during corpus synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscardReason {
    ParseError,
    MissingGold,
    MissingAnnotation,
    ProviderError,
    StepCountMismatch,
    MalformedAnnotation,
    MissingFinalAnswer,
    VerifierDisagreement,
}

/// Keep/discard decision for one merged trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Discard(DiscardReason),
}

/// Keeps the trajectory iff the final step's annotated score equals the
/// verifier's correctness of the final answer.
pub fn filter_consistent(merged: &ParsedTrajectory, gold: &CanonicalAnswer) -> FilterDecision {
    let Some(answer) = merged.final_answer() else {
        return FilterDecision::Discard(DiscardReason::MissingFinalAnswer);
    };
    let Ok(canonical) = canonicalize(answer) else {
        return FilterDecision::Discard(DiscardReason::MissingFinalAnswer);
    };
    let verifier_correct = answers_equal(&canonical, gold);
    let final_score = merged
        .steps()
        .last()
        .and_then(|s| s.critique.as_ref())
        .and_then(|c| if c.valid { c.score.as_u8() } else { None });
    match final_score {
        Some(score) => {
            if (score == 1) == verifier_correct {
                FilterDecision::Keep
            } else {
                FilterDecision::Discard(DiscardReason::VerifierDisagreement)
            }
        }
        None => FilterDecision::Discard(DiscardReason::VerifierDisagreement),
    }
}

/// One corpus entry: problem statement (or id) plus the full interleaved
/// rendering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub problem: String,
    pub text: String,
}

/// Synthesis report: counts by outcome, in input order per record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub input_records: usize,
    pub kept: usize,
    pub discarded: usize,
    pub discarded_by_reason: BTreeMap<String, usize>,
    pub outcomes: Vec<RecordOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub problem_id: String,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<DiscardReason>,
}

fn reason_key(reason: &DiscardReason) -> String {
    serde_json::to_value(reason)
        .expect("reason serializes")
        .as_str()
        .expect("reason is a string")
        .to_string()
}

/// Runs the full synthesis over a traces file: parse, annotate, merge,
/// filter, and write the kept corpus plus a report. Record-level failures
/// become discard reasons; the run itself only fails on file-level I/O.
pub fn build_corpus(
    traces_path: &Path,
    provider: &dyn CritiqueProvider,
    gold_path: &Path,
    corpus_out: &Path,
    report_out: &Path,
) -> Result<CorpusReport, PipelineError> {
    let traces: Vec<TraceRecord> = read_jsonl(traces_path)?;
    let gold_records: Vec<GoldRecord> = read_jsonl(gold_path)?;
    let gold: BTreeMap<String, CanonicalAnswer> = gold_records
        .iter()
        .filter_map(|g| {
            canonicalize(&g.gold_answer)
                .ok()
                .map(|c| (g.problem_id.clone(), c))
        })
        .collect();

    let results: Vec<(String, Result<CorpusRecord, DiscardReason>)> = traces
        .par_iter()
        .map(|trace| {
            let outcome = synthesize_one(trace, provider, &gold);
            (trace.problem_id.clone(), outcome)
        })
        .collect();

    let mut kept_records = Vec::new();
    let mut outcomes = Vec::new();
    let mut discarded_by_reason: BTreeMap<String, usize> = BTreeMap::new();
    for (problem_id, result) in results {
        match result {
            Ok(record) => {
                outcomes.push(RecordOutcome {
                    problem_id,
                    kept: true,
                    reason: None,
                });
                kept_records.push(record);
            }
            Err(reason) => {
                *discarded_by_reason.entry(reason_key(&reason)).or_insert(0) += 1;
                outcomes.push(RecordOutcome {
                    problem_id,
                    kept: false,
                    reason: Some(reason),
                });
            }
        }
    }

    let report = CorpusReport {
        input_records: traces.len(),
        kept: kept_records.len(),
        discarded: traces.len() - kept_records.len(),
        discarded_by_reason,
        outcomes,
    };

    let corpus_file = std::fs::File::create(corpus_out).map_err(|source| PipelineError::Io {
        path: corpus_out.display().to_string(),
        source,
    })?;
    write_jsonl(corpus_file, &kept_records).map_err(|source| PipelineError::Io {
        path: corpus_out.display().to_string(),
        source,
    })?;
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(report_out, report_json + "\n").map_err(|source| PipelineError::Io {
        path: report_out.display().to_string(),
        source,
    })?;
    Ok(report)
}

fn synthesize_one(
    trace: &TraceRecord,
    provider: &dyn CritiqueProvider,
    gold: &BTreeMap<String, CanonicalAnswer>,
) -> Result<CorpusRecord, DiscardReason> {
    let gold_answer = gold
        .get(&trace.problem_id)
        .ok_or(DiscardReason::MissingGold)?;
    let text = trace.trace_text().map_err(|_| DiscardReason::ParseError)?;
    let parsed = crate::trajectory::parse_trace(&text).map_err(|_| DiscardReason::ParseError)?;
    let step_texts: Vec<String> = parsed
        .steps()
        .iter()
        .map(|s| s.reasoning.clone())
        .collect();
    let problem_statement = trace.problem.clone().unwrap_or_else(|| trace.problem_id.clone());
    let annotation = provider
        .annotate(&trace.problem_id, &problem_statement, &step_texts)
        .map_err(|e| match e {
            PipelineError::Provider(msg) if msg.starts_with("no annotation") => {
                DiscardReason::MissingAnnotation
            }
            _ => DiscardReason::ProviderError,
        })?;
    let merged = merge_critiques(&parsed, &annotation).map_err(|e| match e {
        PipelineError::StepCountMismatch { .. } => DiscardReason::StepCountMismatch,
        PipelineError::MalformedAnnotation => DiscardReason::MalformedAnnotation,
        _ => DiscardReason::ProviderError,
    })?;
    match filter_consistent(&merged, gold_answer) {
        FilterDecision::Keep => Ok(CorpusRecord {
            problem: problem_statement,
            text: merged.render(TraceMode::Full),
        }),
        FilterDecision::Discard(reason) => Err(reason),
    }
}
