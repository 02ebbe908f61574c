//! JSONL record schemas and line-oriented I/O helpers.
//!
//! Token spans in trace records are byte offsets into `text`. When `tokens`
//! is absent, the default whitespace-preserving character-level segmentation
//! is applied (one token per character).

use crate::trajectory::{
    Critique, CritiqueScore, ParsedTrajectory, TokenLabel, TokenPiece, TraceStep, TraceText,
    TrajectoryError,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
}

/// One raw trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub problem_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<(String, usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    /// Problem statement, carried through to synthesized corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
}

impl TraceRecord {
    pub fn trace_text(&self) -> Result<TraceText, TrajectoryError> {
        match &self.tokens {
            Some(tokens) => TraceText::new(
                self.text.clone(),
                tokens
                    .iter()
                    .map(|(text, start, end)| TokenPiece {
                        text: text.clone(),
                        start: *start,
                        end: *end,
                    })
                    .collect(),
            ),
            None => Ok(TraceText::with_char_tokens(self.text.clone())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CritiqueRecord {
    pub justification: String,
    /// "1", "0", or "malformed".
    pub score: String,
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critique: Option<CritiqueRecord>,
}

/// Structured parse output. Labels are compact strings: `R<step>`,
/// `C<step>`, or `S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParsedRecord {
    pub problem_id: String,
    pub t: usize,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    pub token_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered: Option<String>,
}

pub fn label_to_string(label: &TokenLabel) -> String {
    match label {
        TokenLabel::Reasoning(i) => format!("R{i}"),
        TokenLabel::CritiqueBody(i) => format!("C{i}"),
        TokenLabel::Separator => "S".to_string(),
    }
}

pub fn label_from_string(s: &str) -> Option<TokenLabel> {
    if s == "S" {
        return Some(TokenLabel::Separator);
    }
    let (kind, idx) = s.split_at(1);
    let idx: usize = idx.parse().ok()?;
    match kind {
        "R" => Some(TokenLabel::Reasoning(idx)),
        "C" => Some(TokenLabel::CritiqueBody(idx)),
        _ => None,
    }
}

impl ParsedRecord {
    pub fn from_trajectory(problem_id: &str, traj: &ParsedTrajectory) -> Self {
        Self {
            problem_id: problem_id.to_string(),
            t: traj.step_count(),
            steps: traj
                .steps()
                .iter()
                .map(|s| StepRecord {
                    reasoning: s.reasoning.clone(),
                    critique: s.critique.as_ref().map(|c| CritiqueRecord {
                        justification: c.justification.clone(),
                        score: match c.score {
                            CritiqueScore::Correct => "1".to_string(),
                            CritiqueScore::Incorrect => "0".to_string(),
                            CritiqueScore::Malformed => "malformed".to_string(),
                        },
                        valid: c.valid,
                    }),
                })
                .collect(),
            final_answer: traj.final_answer().map(str::to_string),
            token_labels: traj.token_labels().iter().map(label_to_string).collect(),
            diagnostics: traj
                .diagnostics()
                .iter()
                .map(|d| format!("{d:?}"))
                .collect(),
            rendered: None,
        }
    }

    /// Rebuilds the trajectory structure by rendering the steps canonically
    /// and re-parsing (labels use the default character segmentation).
    pub fn to_trajectory(&self) -> Result<ParsedTrajectory, TrajectoryError> {
        let steps: Vec<TraceStep> = self
            .steps
            .iter()
            .map(|s| {
                let critique = s.critique.as_ref().map(|c| match c.score.as_str() {
                    "1" => Critique::well_formed(c.justification.clone(), true),
                    "0" => Critique::well_formed(c.justification.clone(), false),
                    _ => Critique::malformed(c.justification.clone()),
                });
                TraceStep::new(s.reasoning.clone(), critique)
            })
            .collect();
        let rendered = ParsedTrajectory::from_steps(steps).render(crate::trajectory::TraceMode::Full);
        crate::trajectory::parse_str(&rendered)
    }
}

/// Gold answer for one problem; optional per-step gold values for stub
/// critique providers and process-level metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldRecord {
    pub problem_id: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_intermediates: Option<Vec<i64>>,
}

/// Reward output for one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardRecord {
    pub problem_id: String,
    pub r_reason: u8,
    pub z: u8,
    pub r_crit: u8,
    pub r_format: f64,
    /// Per-step scores; null marks an absent/malformed critique.
    pub step_scores: Vec<Option<u8>>,
}

/// A group of trajectories for one problem (advantage/objective input).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRecord {
    pub problem_id: String,
    pub gold_answer: String,
    pub trajectories: Vec<TrajectoryEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<(String, usize, usize)>>,
}

impl TrajectoryEntry {
    pub fn trace_text(&self) -> Result<TraceText, TrajectoryError> {
        match &self.tokens {
            Some(tokens) => TraceText::new(
                self.text.clone(),
                tokens
                    .iter()
                    .map(|(text, start, end)| TokenPiece {
                        text: text.clone(),
                        start: *start,
                        end: *end,
                    })
                    .collect(),
            ),
            None => Ok(TraceText::with_char_tokens(self.text.clone())),
        }
    }
}

/// Advantage output for one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub problem_id: String,
    pub token_counts: Vec<usize>,
    pub critique: Vec<Vec<f64>>,
    pub reasoning: Vec<Vec<f64>>,
    pub format: Vec<Vec<f64>>,
    pub dense: Vec<Vec<f64>>,
    pub combined: Vec<Vec<f64>>,
    pub total: Vec<Vec<f64>>,
}

/// Per-token log-probabilities for one group (objective input).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogprobRecord {
    pub problem_id: String,
    pub trajectories: Vec<LogprobEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogprobEntry {
    pub current: Vec<f64>,
    pub behavior: Vec<f64>,
    pub reference: Vec<f64>,
}

/// One evaluation sample (eval/select input).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_scores: Option<Vec<u8>>,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_step_labels: Option<Vec<u8>>,
}

/// Stepwise critique annotations from an external provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub problem_id: String,
    pub steps: Vec<AnnotationStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationStep {
    pub justification: String,
    pub score: u8,
}

/// Reads a JSONL file into typed records with per-line diagnostics.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let file = std::fs::File::open(path).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RecordError::Schema {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Serializes records one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> std::io::Result<()> {
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
