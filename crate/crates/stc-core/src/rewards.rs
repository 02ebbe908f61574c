//! Trajectory-level rewards and per-step critique scores.
//!
//! Three rewards are computed per trajectory against a gold answer:
//! - reasoning reward: 1 iff the extracted final answer equals gold;
//! - critique-consistency reward: 1 iff the final step's critique is valid
//!   and its score matches the true correctness of the final answer;
//! - format reward: fraction of steps followed by a well-formed critique.
//!
//! A missing final answer counts as incorrect and a missing or malformed
//! final critique earns no consistency reward, so all rewards are total
//! functions during rollouts.

use crate::scalar::Scalar;
use crate::trajectory::ParsedTrajectory;
use crate::verifier::{answers_equal, canonicalize, CanonicalAnswer};

/// A step's critique score: binary, or absent when missing/malformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepScore {
    Score(u8),
    Absent,
}

impl StepScore {
    /// Absent scores map to 0 when used as dense rewards: a missing
    /// self-check is treated as a failed check.
    pub fn as_dense_reward<S: Scalar>(self) -> S {
        match self {
            StepScore::Score(v) => S::from_count(v as usize),
            StepScore::Absent => S::zero(),
        }
    }
}

/// All rewards for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBundle<S: Scalar> {
    /// R_reason: final answer correct.
    pub r_reason: u8,
    /// z: true correctness indicator of the final answer (equals r_reason).
    pub z: u8,
    /// R_crit: final critique consistent with z.
    pub r_crit: u8,
    /// R_format: fraction of valid reasoning-critique pairs, in [0, 1].
    pub r_format: S,
    /// Per-step critique scores s_n.
    pub step_scores: Vec<StepScore>,
}

impl<S: Scalar> RewardBundle<S> {
    /// Computes the full bundle for a trajectory against a gold answer.
    pub fn compute(traj: &ParsedTrajectory, gold: &CanonicalAnswer) -> Self {
        let r_reason = reasoning_reward(traj, gold);
        Self {
            r_reason,
            z: r_reason,
            r_crit: critique_consistency_reward(traj, gold),
            r_format: format_reward(traj),
            step_scores: step_scores(traj),
        }
    }
}

/// R_reason: 1 iff the trajectory's final answer exists and equals gold.
pub fn reasoning_reward(traj: &ParsedTrajectory, gold: &CanonicalAnswer) -> u8 {
    let Some(answer) = traj.final_answer() else {
        return 0;
    };
    let Ok(canonical) = canonicalize(answer) else {
        return 0;
    };
    u8::from(answers_equal(&canonical, gold))
}

/// R_crit: 1 iff the final step's critique is valid and its score equals the
/// true correctness z of the final answer.
pub fn critique_consistency_reward(traj: &ParsedTrajectory, gold: &CanonicalAnswer) -> u8 {
    let z = reasoning_reward(traj, gold);
    let Some(step) = traj.steps().last() else {
        return 0;
    };
    let Some(critique) = &step.critique else {
        return 0;
    };
    if !critique.valid {
        return 0;
    }
    match critique.score.as_u8() {
        Some(s) => u8::from(s == z),
        None => 0,
    }
}

/// R_format: (number of valid pairs) / T.
pub fn format_reward<S: Scalar>(traj: &ParsedTrajectory) -> S {
    let t = traj.step_count();
    if t == 0 {
        return S::zero();
    }
    let valid = traj.validity_flags().iter().filter(|v| **v).count();
    S::from_count(valid) / S::from_count(t)
}

/// Per-step critique scores; absent when the critique is missing or
/// malformed.
pub fn step_scores(traj: &ParsedTrajectory) -> Vec<StepScore> {
    traj.steps()
        .iter()
        .map(|step| {
            step.critique
                .as_ref()
                .and_then(|c| if c.valid { c.score.as_u8() } else { None })
                .map_or(StepScore::Absent, StepScore::Score)
        })
        .collect()
}
