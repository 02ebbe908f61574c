//! An exactly differentiable tabular policy over the toy trace vocabulary.
//!
//! Two decision slots drive generation:
//! - step-result digit choice: for each correct digit 1..=9 a logit row over
//!   the nine digits the policy may emit (learning means making this table
//!   diagonal);
//! - critique-score choice: for each condition (step factually wrong /
//!   right) a logit row over the emitted score {0, 1}.
//!
//! Sampling probabilities are softmax(logits / temperature), so per-token
//! log-probabilities and the Jacobian onto the logits are exact.

use crate::trajectory::TraceMode;
use serde::{Deserialize, Serialize};

pub const DIGITS: usize = 9;

/// Identifies one logit row of the parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotId {
    /// Row for emitting a step result whose correct digit is `1 + row`.
    Answer { row: usize },
    /// Row for emitting a critique score; `row` is 1 when the critiqued
    /// step is factually correct.
    Critique { row: usize },
}

/// Serializable parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySnapshot {
    pub answer_logits: Vec<Vec<f64>>,
    pub critique_logits: Vec<Vec<f64>>,
    pub temperature: f64,
    pub mode: String,
}

/// The toy policy: logit tables, a sampling temperature, and the trace mode
/// it generates in.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub answer_logits: [[f64; DIGITS]; DIGITS],
    pub critique_logits: [[f64; 2]; 2],
    pub temperature: f64,
    pub mode: TraceMode,
}

impl ToyPolicy {
    /// Uniform policy: all logits zero.
    pub fn uniform(temperature: f64, mode: TraceMode) -> Self {
        Self {
            answer_logits: [[0.0; DIGITS]; DIGITS],
            critique_logits: [[0.0; 2]; 2],
            temperature,
            mode,
        }
    }

    /// Scripted oracle: always emits the correct digit and a truthful score.
    /// Logits are large enough that the softmax saturates exactly.
    pub fn oracle(mode: TraceMode) -> Self {
        let mut policy = Self::uniform(1.0, mode);
        for d in 0..DIGITS {
            policy.answer_logits[d][d] = 1e4;
        }
        policy.critique_logits[0][0] = 1e4; // wrong step -> score 0
        policy.critique_logits[1][1] = 1e4; // right step -> score 1
        policy
    }

    fn row(&self, slot: SlotId) -> &[f64] {
        match slot {
            SlotId::Answer { row } => &self.answer_logits[row],
            SlotId::Critique { row } => &self.critique_logits[row],
        }
    }

    /// Softmax(logits / temperature) for a slot.
    pub fn probs(&self, slot: SlotId) -> Vec<f64> {
        let row = self.row(slot);
        let inv_t = 1.0 / self.temperature;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| ((l - max) * inv_t).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    }

    /// Log-probability of a specific choice.
    pub fn logp(&self, slot: SlotId, choice: usize) -> f64 {
        let row = self.row(slot);
        let inv_t = 1.0 / self.temperature;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row
            .iter()
            .map(|l| ((l - max) * inv_t).exp())
            .sum::<f64>()
            .ln();
        (row[choice] - max) * inv_t - log_sum
    }

    /// Samples a choice; returns (choice, log-probability).
    pub fn sample<R: rand::Rng>(&self, slot: SlotId, rng: &mut R) -> (usize, f64) {
        let probs = self.probs(slot);
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut choice = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                choice = i;
                break;
            }
        }
        (choice, self.logp(slot, choice))
    }

    pub fn all_finite(&self) -> bool {
        self.answer_logits
            .iter()
            .flatten()
            .chain(self.critique_logits.iter().flatten())
            .all(|l| l.is_finite())
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            answer_logits: self.answer_logits.iter().map(|r| r.to_vec()).collect(),
            critique_logits: self.critique_logits.iter().map(|r| r.to_vec()).collect(),
            temperature: self.temperature,
            mode: match self.mode {
                TraceMode::Full => "full".to_string(),
                TraceMode::Compact => "compact".to_string(),
            },
        }
    }

    pub fn from_snapshot(snapshot: &PolicySnapshot) -> Option<Self> {
        if snapshot.answer_logits.len() != DIGITS
            || snapshot.answer_logits.iter().any(|r| r.len() != DIGITS)
            || snapshot.critique_logits.len() != 2
            || snapshot.critique_logits.iter().any(|r| r.len() != 2)
            || snapshot.temperature <= 0.0
        {
            return None;
        }
        let mode = match snapshot.mode.as_str() {
            "full" => TraceMode::Full,
            "compact" => TraceMode::Compact,
            _ => return None,
        };
        let mut policy = Self::uniform(snapshot.temperature, mode);
        for (d, row) in snapshot.answer_logits.iter().enumerate() {
            policy.answer_logits[d].copy_from_slice(row);
        }
        for (c, row) in snapshot.critique_logits.iter().enumerate() {
            policy.critique_logits[c].copy_from_slice(row);
        }
        Some(policy)
    }

    /// Flat parameter view for finite-difference checks: answer rows then
    /// critique rows, row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(DIGITS * DIGITS + 4);
        for row in &self.answer_logits {
            out.extend_from_slice(row);
        }
        for row in &self.critique_logits {
            out.extend_from_slice(row);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        debug_assert_eq!(params.len(), DIGITS * DIGITS + 4);
        for (d, row) in self.answer_logits.iter_mut().enumerate() {
            row.copy_from_slice(&params[d * DIGITS..(d + 1) * DIGITS]);
        }
        let base = DIGITS * DIGITS;
        for (c, row) in self.critique_logits.iter_mut().enumerate() {
            row.copy_from_slice(&params[base + c * 2..base + (c + 1) * 2]);
        }
    }
}

/// Accumulated gradient over the policy's logit tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub answer: [[f64; DIGITS]; DIGITS],
    pub critique: [[f64; 2]; 2],
}

impl PolicyGradient {
    pub fn zero() -> Self {
        Self {
            answer: [[0.0; DIGITS]; DIGITS],
            critique: [[0.0; 2]; 2],
        }
    }

    /// Chains an objective gradient coefficient at one decision through the
    /// softmax Jacobian: d logp(choice) / d logit_j = (1[j = choice] - p_j)
    /// / temperature.
    pub fn add_decision(
        &mut self,
        policy: &ToyPolicy,
        slot: SlotId,
        choice: usize,
        coefficient: f64,
    ) {
        let probs = policy.probs(slot);
        let inv_t = 1.0 / policy.temperature;
        let row = match slot {
            SlotId::Answer { row } => &mut self.answer[row][..],
            SlotId::Critique { row } => &mut self.critique[row][..],
        };
        for (j, p) in probs.iter().enumerate() {
            let indicator = if j == choice { 1.0 } else { 0.0 };
            row[j] += coefficient * (indicator - p) * inv_t;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in &mut self.answer {
            for v in row {
                *v *= factor;
            }
        }
        for row in &mut self.critique {
            for v in row {
                *v *= factor;
            }
        }
    }

    /// Gradient-ascent step.
    pub fn apply_to(&self, policy: &mut ToyPolicy, learning_rate: f64) {
        for (d, row) in self.answer.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                policy.answer_logits[d][j] += learning_rate * g;
            }
        }
        for (c, row) in self.critique.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                policy.critique_logits[c][j] += learning_rate * g;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(DIGITS * DIGITS + 4);
        for row in &self.answer {
            out.extend_from_slice(row);
        }
        for row in &self.critique {
            out.extend_from_slice(row);
        }
        out
    }
}
