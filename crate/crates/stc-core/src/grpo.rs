//! Clipped group-relative policy objective and SFT negative log-likelihood,
//! as differentiable functions of per-token log-probabilities.
//!
//! The objective for a group of G trajectories is
//!
//! ```text
//! J = (1/G) Σ_k (1/|τ_k|) Σ_t [ min(ρ Ã, clip(ρ, 1-ε, 1+ε) Ã) - β kl_t ]
//! ```
//!
//! with ρ = exp(logp_current - logp_behavior) and the non-negative per-token
//! KL estimator `kl_t = exp(Δ) - Δ - 1`, `Δ = logp_reference - logp_current`
//! (evaluated as `exp_m1(Δ) - Δ` so it stays non-negative under rounding).
//!
//! The module never owns model parameters: it returns the exact per-token
//! gradient of the objective with respect to `logp_current`, which any
//! differentiable policy can chain through its own Jacobian.

use crate::advantage::{AdvantageField, GroupBatch};
use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrpoError {
    #[error("log-probability vectors have mismatched lengths: current {current}, behavior {behavior}, reference {reference}")]
    LengthMismatch {
        current: usize,
        behavior: usize,
        reference: usize,
    },
    #[error("log-probability at token {index} is not finite or positive")]
    InvalidLogprob { index: usize },
    #[error("importance ratio at token {index} is not finite")]
    NonFiniteRatio { index: usize },
    #[error("trajectory count mismatch: group has {expected}, got {actual}")]
    TrajectoryCountMismatch { expected: usize, actual: usize },
    #[error("trajectory {index}: expected {expected} tokens, got {actual}")]
    TokenCountMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("clip epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(String),
    #[error("KL coefficient beta must be finite and non-negative, got {0}")]
    InvalidBeta(String),
    #[error("empty trajectory has no log-likelihood")]
    EmptyTrajectory,
}

/// Aligned per-token log-probabilities under the current, behavior, and
/// reference policies for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLogprobs<S: Scalar> {
    current: Vec<S>,
    behavior: Vec<S>,
    reference: Vec<S>,
}

impl<S: Scalar> PolicyLogprobs<S> {
    pub fn new(current: Vec<S>, behavior: Vec<S>, reference: Vec<S>) -> Result<Self, GrpoError> {
        if current.len() != behavior.len() || current.len() != reference.len() {
            return Err(GrpoError::LengthMismatch {
                current: current.len(),
                behavior: behavior.len(),
                reference: reference.len(),
            });
        }
        for (index, ((c, b), r)) in current
            .iter()
            .zip(&behavior)
            .zip(&reference)
            .enumerate()
        {
            let ok = c.is_finite()
                && b.is_finite()
                && r.is_finite()
                && *c <= S::zero()
                && *b <= S::zero()
                && *r <= S::zero();
            if !ok {
                return Err(GrpoError::InvalidLogprob { index });
            }
        }
        Ok(Self {
            current,
            behavior,
            reference,
        })
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn current(&self) -> &[S] {
        &self.current
    }

    pub fn behavior(&self) -> &[S] {
        &self.behavior
    }

    pub fn reference(&self) -> &[S] {
        &self.reference
    }
}

/// Clipping and KL hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig<S: Scalar> {
    pub epsilon: S,
    pub beta: S,
}

impl<S: Scalar> Default for ClipConfig<S> {
    fn default() -> Self {
        Self {
            epsilon: S::from_f64(0.2).unwrap(),
            beta: S::from_f64(0.001).unwrap(),
        }
    }
}

impl<S: Scalar> ClipConfig<S> {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.epsilon > S::zero() && self.epsilon < S::one()) {
            return Err(GrpoError::InvalidEpsilon(format!("{}", self.epsilon)));
        }
        if !(self.beta.is_finite() && self.beta >= S::zero()) {
            return Err(GrpoError::InvalidBeta(format!("{}", self.beta)));
        }
        Ok(())
    }
}

/// Importance ratios ρ_t = exp(logp_current - logp_behavior).
pub fn importance_ratios<S: Scalar>(lp: &PolicyLogprobs<S>) -> Result<Vec<S>, GrpoError> {
    lp.current
        .iter()
        .zip(&lp.behavior)
        .enumerate()
        .map(|(index, (c, b))| {
            let ratio = (*c - *b).exp();
            if ratio.is_finite() {
                Ok(ratio)
            } else {
                Err(GrpoError::NonFiniteRatio { index })
            }
        })
        .collect()
}

/// Non-negative per-token KL estimator exp(Δ) - Δ - 1 with
/// Δ = logp_reference - logp_current.
fn kl_estimate<S: Scalar>(delta: S) -> S {
    delta.exp_m1() - delta
}

/// Objective value plus per-token gradient with respect to `logp_current`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoEvaluation<S: Scalar> {
    pub objective: S,
    /// `grad[k][t]` = ∂J/∂`logp_current[k][t]`.
    pub grad_logp_current: Vec<Vec<S>>,
}

/// Evaluates the clipped surrogate with KL penalty for a group batch.
pub fn grpo_objective<S: Scalar>(
    group: &GroupBatch<S>,
    field: &AdvantageField<S>,
    logprobs: &[PolicyLogprobs<S>],
    cfg: &ClipConfig<S>,
) -> Result<GrpoEvaluation<S>, GrpoError> {
    grpo_objective_with_counts(&group.token_counts(), field, logprobs, cfg)
}

/// As [`grpo_objective`], with the alignment contract given as explicit
/// per-trajectory token counts |τ_k|.
pub fn grpo_objective_with_counts<S: Scalar>(
    token_counts: &[usize],
    field: &AdvantageField<S>,
    logprobs: &[PolicyLogprobs<S>],
    cfg: &ClipConfig<S>,
) -> Result<GrpoEvaluation<S>, GrpoError> {
    cfg.validate()?;
    let group_size = token_counts.len();
    if field.total.len() != group_size {
        return Err(GrpoError::TrajectoryCountMismatch {
            expected: group_size,
            actual: field.total.len(),
        });
    }
    if logprobs.len() != group_size {
        return Err(GrpoError::TrajectoryCountMismatch {
            expected: group_size,
            actual: logprobs.len(),
        });
    }
    for (index, (&expected, lp)) in token_counts.iter().zip(logprobs).enumerate() {
        if lp.len() != expected {
            return Err(GrpoError::TokenCountMismatch {
                index,
                expected,
                actual: lp.len(),
            });
        }
        if field.total[index].len() != expected {
            return Err(GrpoError::TokenCountMismatch {
                index,
                expected,
                actual: field.total[index].len(),
            });
        }
    }

    let g = S::from_count(group_size.max(1));
    let low = S::one() - cfg.epsilon;
    let high = S::one() + cfg.epsilon;
    let mut objective = S::zero();
    let mut grads = Vec::with_capacity(group_size);

    for (k, lp) in logprobs.iter().enumerate() {
        let ratios = importance_ratios(lp)?;
        let n = S::from_count(lp.len().max(1));
        let scale = S::one() / (g * n);
        let mut traj_sum = S::zero();
        let mut grad = Vec::with_capacity(lp.len());
        for (t, &ratio) in ratios.iter().enumerate() {
            let adv = field.total[k][t];
            let clipped = if ratio < low {
                low
            } else if ratio > high {
                high
            } else {
                ratio
            };
            let unclipped_term = ratio * adv;
            let clipped_term = clipped * adv;
            let surrogate = if unclipped_term < clipped_term {
                unclipped_term
            } else {
                clipped_term
            };
            // d surrogate / d logp_current: the unclipped branch moves with
            // ρ (dρ/dlogp = ρ); the clipped branch is constant.
            let surrogate_grad = if unclipped_term <= clipped_term {
                adv * ratio
            } else {
                S::zero()
            };
            let delta = lp.reference[t] - lp.current[t];
            let kl = kl_estimate(delta);
            // d(-β kl)/d logp_current = β (exp(Δ) - 1).
            let kl_grad = cfg.beta * delta.exp_m1();
            traj_sum = traj_sum + surrogate - cfg.beta * kl;
            grad.push(scale * (surrogate_grad + kl_grad));
        }
        objective = objective + traj_sum / n;
        grads.push(grad);
    }

    Ok(GrpoEvaluation {
        objective: objective / g,
        grad_logp_current: grads,
    })
}

/// SFT negative log-likelihood: `-Σ_t logp_current[t]` over one trajectory.
/// Batch averaging is the caller's concern.
pub fn sft_nll<S: Scalar>(lp_current: &[S]) -> Result<S, GrpoError> {
    if lp_current.is_empty() {
        return Err(GrpoError::EmptyTrajectory);
    }
    for (index, lp) in lp_current.iter().enumerate() {
        if !lp.is_finite() {
            return Err(GrpoError::InvalidLogprob { index });
        }
    }
    Ok(-lp_current.iter().copied().sum::<S>())
}
