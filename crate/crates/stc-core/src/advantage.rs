//! Group-relative advantage computation.
//!
//! For a group of G trajectories sampled for the same problem:
//! - rewards are normalized within the group: (v - mean) / population std,
//!   with a zero-variance guard returning all zeros;
//! - critique-consistency advantages back-propagate only to critique tokens,
//!   scaled by the token-length regulator |τ| / |τ^crit|;
//! - reasoning and format advantages apply uniformly to all tokens;
//! - dense step advantages are suffix sums of group-normalized step critique
//!   scores, pooled across every step of every trajectory in the group, and
//!   attach to reasoning tokens through the step index s(t).
//!
//! The total per-token advantage is the weighted sum of the four stored
//! components, recomputable bit-for-bit from the stored parts.

use crate::rewards::RewardBundle;
use crate::scalar::{mean, population_std, Scalar};
use crate::trajectory::{ParsedTrajectory, TokenLabel};
use crate::verifier::CanonicalAnswer;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdvantageError {
    #[error("group must contain at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("trajectory {index} has no tokens")]
    EmptyTrajectory { index: usize },
    #[error("advantage weights must be non-negative")]
    NegativeWeight,
}

/// One trajectory of a group: parsed structure plus its rewards.
#[derive(Debug, Clone)]
pub struct GroupMember<S: Scalar> {
    pub trajectory: ParsedTrajectory,
    pub rewards: RewardBundle<S>,
}

/// G trajectories for one problem; the unit of advantage computation.
#[derive(Debug, Clone)]
pub struct GroupBatch<S: Scalar> {
    problem_id: String,
    members: Vec<GroupMember<S>>,
}

impl<S: Scalar> GroupBatch<S> {
    pub fn new(
        problem_id: impl Into<String>,
        members: Vec<GroupMember<S>>,
    ) -> Result<Self, AdvantageError> {
        if members.len() < 2 {
            return Err(AdvantageError::GroupTooSmall(members.len()));
        }
        for (index, m) in members.iter().enumerate() {
            if m.trajectory.token_count() == 0 {
                return Err(AdvantageError::EmptyTrajectory { index });
            }
        }
        Ok(Self {
            problem_id: problem_id.into(),
            members,
        })
    }

    /// Builds a group by computing reward bundles against a gold answer.
    pub fn from_trajectories(
        problem_id: impl Into<String>,
        trajectories: Vec<ParsedTrajectory>,
        gold: &CanonicalAnswer,
    ) -> Result<Self, AdvantageError> {
        let members = trajectories
            .into_iter()
            .map(|trajectory| {
                let rewards = RewardBundle::compute(&trajectory, gold);
                GroupMember { trajectory, rewards }
            })
            .collect();
        Self::new(problem_id, members)
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    pub fn members(&self) -> &[GroupMember<S>] {
        &self.members
    }

    pub fn group_size(&self) -> usize {
        self.members.len()
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.members
            .iter()
            .map(|m| m.trajectory.token_count())
            .collect()
    }
}

/// Weights for combining advantage components. The paper pins
/// lambda_format = 0.05 and lambda_dense = 0.5; the critique and reasoning
/// weights default to unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageWeights<S: Scalar> {
    pub lambda_crit: S,
    pub lambda_reason: S,
    pub lambda_format: S,
    pub lambda_dense: S,
}

impl<S: Scalar> Default for AdvantageWeights<S> {
    fn default() -> Self {
        Self {
            lambda_crit: S::one(),
            lambda_reason: S::one(),
            lambda_format: S::from_f64(0.05).unwrap(),
            lambda_dense: S::from_f64(0.5).unwrap(),
        }
    }
}

impl<S: Scalar> AdvantageWeights<S> {
    pub fn validate(&self) -> Result<(), AdvantageError> {
        let ok = self.lambda_crit >= S::zero()
            && self.lambda_reason >= S::zero()
            && self.lambda_format >= S::zero()
            && self.lambda_dense >= S::zero();
        if ok {
            Ok(())
        } else {
            Err(AdvantageError::NegativeWeight)
        }
    }
}

/// Per-token advantages for a group, stored by component. Each component
/// already carries its weight (and the |τ|/|τ^crit| regulator for the
/// critique part), so `total = critique + reasoning + format + dense`
/// holds elementwise, bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageField<S: Scalar> {
    pub critique: Vec<Vec<S>>,
    pub reasoning: Vec<Vec<S>>,
    pub format: Vec<Vec<S>>,
    pub dense: Vec<Vec<S>>,
    /// Combined 𝒜 (critique + reasoning + format).
    pub combined: Vec<Vec<S>>,
    /// Total Ã (combined + dense).
    pub total: Vec<Vec<S>>,
}

/// Group normalization: (v - mean) / population std. A zero-variance group
/// yields all zeros rather than an epsilon-inflated value.
pub fn group_normalize<S: Scalar>(values: &[S]) -> Result<Vec<S>, AdvantageError> {
    if values.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(values.len()));
    }
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return Ok(vec![S::zero(); values.len()]);
    }
    let m = mean(values);
    let std = population_std(values);
    if std == S::zero() {
        return Ok(vec![S::zero(); values.len()]);
    }
    Ok(values.iter().map(|&v| (v - m) / std).collect())
}

/// Critique-consistency advantage per token: the group-normalized R_crit of
/// the trajectory on critique-body tokens, zero elsewhere (unscaled).
pub fn critique_token_field<S: Scalar>(batch: &GroupBatch<S>) -> Result<Vec<Vec<S>>, AdvantageError> {
    let r_crit: Vec<S> = batch
        .members()
        .iter()
        .map(|m| S::from_count(m.rewards.r_crit as usize))
        .collect();
    let normalized = group_normalize(&r_crit)?;
    Ok(batch
        .members()
        .iter()
        .zip(normalized)
        .map(|(m, a)| {
            m.trajectory
                .token_labels()
                .iter()
                .map(|label| match label {
                    TokenLabel::CritiqueBody(_) => a,
                    _ => S::zero(),
                })
                .collect()
        })
        .collect())
}

/// Combined per-token advantage 𝒜: weighted critique term with the
/// |τ|/|τ^crit| regulator plus uniform reasoning and format terms. A
/// trajectory with no critique tokens contributes a zero critique term.
pub fn combined_field<S: Scalar>(
    batch: &GroupBatch<S>,
    weights: &AdvantageWeights<S>,
) -> Result<Vec<Vec<S>>, AdvantageError> {
    weights.validate()?;
    let field = compute_components(batch, weights)?;
    Ok(field.combined)
}

/// Dense step advantages: every step score in the group (absent mapped to 0)
/// is pooled into one set, normalized, and suffix-summed within each
/// trajectory: `A_dense[n] = normalized[n] + A_dense[n + 1]`.
pub fn dense_step_advantages<S: Scalar>(batch: &GroupBatch<S>) -> Result<Vec<Vec<S>>, AdvantageError> {
    if batch.group_size() < 2 {
        return Err(AdvantageError::GroupTooSmall(batch.group_size()));
    }
    let pooled: Vec<S> = batch
        .members()
        .iter()
        .flat_map(|m| m.rewards.step_scores.iter().map(|s| s.as_dense_reward()))
        .collect();
    let normalized = if pooled.len() < 2 {
        vec![S::zero(); pooled.len()]
    } else {
        group_normalize(&pooled)?
    };
    let mut out = Vec::with_capacity(batch.group_size());
    let mut offset = 0usize;
    for m in batch.members() {
        let t = m.rewards.step_scores.len();
        let slice = &normalized[offset..offset + t];
        offset += t;
        let mut dense = vec![S::zero(); t];
        let mut acc = S::zero();
        for n in (0..t).rev() {
            acc = slice[n] + acc;
            dense[n] = acc;
        }
        out.push(dense);
    }
    Ok(out)
}

/// The full advantage field: components, combined 𝒜, and total Ã.
pub fn total_field<S: Scalar>(
    batch: &GroupBatch<S>,
    weights: &AdvantageWeights<S>,
) -> Result<AdvantageField<S>, AdvantageError> {
    weights.validate()?;
    compute_components(batch, weights)
}

fn compute_components<S: Scalar>(
    batch: &GroupBatch<S>,
    weights: &AdvantageWeights<S>,
) -> Result<AdvantageField<S>, AdvantageError> {
    let critique_raw = critique_token_field(batch)?;
    let r_reason: Vec<S> = batch
        .members()
        .iter()
        .map(|m| S::from_count(m.rewards.r_reason as usize))
        .collect();
    let r_format: Vec<S> = batch.members().iter().map(|m| m.rewards.r_format).collect();
    let reason_norm = group_normalize(&r_reason)?;
    let format_norm = group_normalize(&r_format)?;
    let dense_steps = dense_step_advantages(batch)?;

    let mut field = AdvantageField {
        critique: Vec::with_capacity(batch.group_size()),
        reasoning: Vec::with_capacity(batch.group_size()),
        format: Vec::with_capacity(batch.group_size()),
        dense: Vec::with_capacity(batch.group_size()),
        combined: Vec::with_capacity(batch.group_size()),
        total: Vec::with_capacity(batch.group_size()),
    };

    for (k, member) in batch.members().iter().enumerate() {
        let traj = &member.trajectory;
        let n_tokens = traj.token_count();
        let n_crit = traj.critique_token_count();
        let regulator = if n_crit == 0 {
            S::zero()
        } else {
            S::from_count(n_tokens) / S::from_count(n_crit)
        };
        let reason_term = weights.lambda_reason * reason_norm[k];
        let format_term = weights.lambda_format * format_norm[k];

        let mut critique = Vec::with_capacity(n_tokens);
        let mut reasoning = Vec::with_capacity(n_tokens);
        let mut format = Vec::with_capacity(n_tokens);
        let mut dense = Vec::with_capacity(n_tokens);
        let mut combined = Vec::with_capacity(n_tokens);
        let mut total = Vec::with_capacity(n_tokens);

        for (t, label) in traj.token_labels().iter().enumerate() {
            let c = weights.lambda_crit * regulator * critique_raw[k][t];
            let d = match label {
                TokenLabel::Reasoning(step) => {
                    weights.lambda_dense * dense_steps[k][*step - 1]
                }
                _ => S::zero(),
            };
            let comb = c + reason_term + format_term;
            critique.push(c);
            reasoning.push(reason_term);
            format.push(format_term);
            dense.push(d);
            combined.push(comb);
            total.push(comb + d);
        }

        field.critique.push(critique);
        field.reasoning.push(reasoning);
        field.format.push(format);
        field.dense.push(dense);
        field.combined.push(combined);
        field.total.push(total);
    }
    Ok(field)
}
