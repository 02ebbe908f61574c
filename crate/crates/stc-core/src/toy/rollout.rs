//! Sampling toy trajectories in the trace grammar.
//!
//! Each compute step renders as `{prev} {op} {operand} = {emitted}` followed
//! in full mode by a critique block; the last step states the boxed final
//! answer (a forced copy of the last emitted value) with its own critique.
//! Only two token kinds carry probability mass: the emitted result digit and
//! the critique score digit. Everything else is template text with
//! log-probability zero, so per-token log-probabilities are exact.
//!
//! Step-correctness ground truth is exact: a step is correct iff its emitted
//! value equals the gold intermediate for that step (the displayed operands
//! are the gold chain, so correctness is visible arithmetic).

use super::policy::{SlotId, ToyPolicy};
use super::problem::ToyProblem;
use super::ToyError;
use crate::advantage::GroupBatch;
use crate::grpo::PolicyLogprobs;
use crate::trajectory::{parse_trace, TokenPiece, TraceMode, TraceText};
use crate::verifier::CanonicalAnswer;
use crate::GroupBatch64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One sampled decision: which token it owns and which table row produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionRef {
    pub token_index: usize,
    pub slot: SlotId,
    pub chosen: usize,
}

/// A single sampled trajectory before grouping.
#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    pub text: TraceText,
    pub logp_current: Vec<f64>,
    pub logp_reference: Vec<f64>,
    pub decisions: Vec<DecisionRef>,
    /// Per-step factual correctness, including the final answer step.
    pub step_truth: Vec<bool>,
    /// Emitted value per compute step.
    pub emitted: Vec<i64>,
    /// Final answer correct.
    pub z: bool,
}

/// A group of G sampled trajectories with everything the optimizer needs.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub batch: GroupBatch64,
    pub logprobs: Vec<PolicyLogprobs<f64>>,
    pub decisions: Vec<Vec<DecisionRef>>,
    pub step_truth: Vec<Vec<bool>>,
    pub z: Vec<bool>,
}

struct TraceBuilder {
    text: String,
    tokens: Vec<TokenPiece>,
    logp_current: Vec<f64>,
    logp_reference: Vec<f64>,
    decisions: Vec<DecisionRef>,
}

impl TraceBuilder {
    fn new() -> Self {
        Self {
            text: String::new(),
            tokens: Vec::new(),
            logp_current: Vec::new(),
            logp_reference: Vec::new(),
            decisions: Vec::new(),
        }
    }

    fn push_forced(&mut self, piece: &str) {
        if piece.is_empty() {
            return;
        }
        let start = self.text.len();
        self.text.push_str(piece);
        self.tokens.push(TokenPiece {
            text: piece.to_string(),
            start,
            end: self.text.len(),
        });
        self.logp_current.push(0.0);
        self.logp_reference.push(0.0);
    }

    fn push_decision(
        &mut self,
        piece: &str,
        slot: SlotId,
        chosen: usize,
        logp_current: f64,
        logp_reference: f64,
    ) {
        let start = self.text.len();
        self.text.push_str(piece);
        self.tokens.push(TokenPiece {
            text: piece.to_string(),
            start,
            end: self.text.len(),
        });
        self.decisions.push(DecisionRef {
            token_index: self.tokens.len() - 1,
            slot,
            chosen,
        });
        self.logp_current.push(logp_current);
        self.logp_reference.push(logp_reference);
    }
}

fn critique_justification(correct_claim: bool) -> &'static str {
    if correct_claim {
        "The computation checks out."
    } else {
        "The computation looks wrong."
    }
}

/// Samples one trajectory for a problem. All intermediates must be single
/// digits (the seeded generator guarantees this).
pub fn sample_trajectory(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    problem: &ToyProblem,
    rng: &mut ChaCha8Rng,
) -> Result<SampledTrajectory, ToyError> {
    if !problem.is_single_digit() {
        return Err(ToyError::ValueOutOfRange {
            value: *problem
                .intermediates
                .iter()
                .find(|v| !(1..=9).contains(*v))
                .unwrap_or(&problem.initial),
        });
    }
    let full = policy.mode == TraceMode::Full;
    let mut b = TraceBuilder::new();
    let mut step_truth = Vec::with_capacity(problem.len() + 1);
    let mut emitted_values = Vec::with_capacity(problem.len());

    let emit_critique = |b: &mut TraceBuilder, condition: bool, rng: &mut ChaCha8Rng| {
        let slot = SlotId::Critique {
            row: usize::from(condition),
        };
        let (choice, logp) = policy.sample(slot, rng);
        let ref_logp = reference.logp(slot, choice);
        let claims_correct = choice == 1;
        b.push_forced("\n");
        b.push_forced("<critic>");
        b.push_forced(critique_justification(claims_correct));
        b.push_forced("</critic>");
        b.push_forced(" ");
        b.push_forced("<score>");
        b.push_decision(
            if claims_correct { "1" } else { "0" },
            slot,
            choice,
            logp,
            ref_logp,
        );
        b.push_forced("</score>");
    };

    let mut prev_gold = problem.initial;
    for (n, (op, operand)) in problem.ops.iter().enumerate() {
        let gold = problem.intermediates[n];
        debug_assert!((1..=9).contains(&gold));
        let slot = SlotId::Answer {
            row: (gold - 1) as usize,
        };
        let (choice, logp) = policy.sample(slot, rng);
        let ref_logp = reference.logp(slot, choice);
        let value = (choice + 1) as i64;
        let correct = value == gold;
        step_truth.push(correct);
        emitted_values.push(value);

        b.push_forced(&prev_gold.to_string());
        b.push_forced(" ");
        b.push_forced(op.symbol());
        b.push_forced(" ");
        b.push_forced(&operand.to_string());
        b.push_forced(" = ");
        b.push_decision(&value.to_string(), slot, choice, logp, ref_logp);
        if full {
            emit_critique(&mut b, correct, rng);
        }
        b.push_forced("\n\n");
        prev_gold = gold;
    }

    // Final answer step: a forced restatement of the last emitted value.
    let last_emitted = *emitted_values.last().expect("chain length >= 1");
    let z = last_emitted == problem.final_answer;
    step_truth.push(z);
    b.push_forced("The final answer is \\boxed{");
    b.push_forced(&last_emitted.to_string());
    b.push_forced("}.");
    if full {
        emit_critique(&mut b, z, rng);
    }

    let text = TraceText::new(b.text, b.tokens)?;
    Ok(SampledTrajectory {
        text,
        logp_current: b.logp_current,
        logp_reference: b.logp_reference,
        decisions: b.decisions,
        step_truth,
        emitted: emitted_values,
        z,
    })
}

/// Samples a group of G trajectories, parses each rendered trace with the
/// real parser, and computes reward bundles against the problem's gold
/// answer.
pub fn rollout(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    problem: &ToyProblem,
    group_size: usize,
    seed: u64,
) -> Result<RolloutGroup, ToyError> {
    let gold = CanonicalAnswer::Integer(problem.final_answer.into());
    let mut trajectories = Vec::with_capacity(group_size);
    let mut logprobs = Vec::with_capacity(group_size);
    let mut decisions = Vec::with_capacity(group_size);
    let mut step_truth = Vec::with_capacity(group_size);
    let mut z = Vec::with_capacity(group_size);
    for k in 0..group_size {
        let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, 0x726f6c6c, k as u64, 0));
        let sampled = sample_trajectory(policy, reference, problem, &mut rng)?;
        let parsed = parse_trace(&sampled.text)?;
        logprobs.push(PolicyLogprobs::new(
            sampled.logp_current.clone(),
            sampled.logp_current.clone(),
            sampled.logp_reference.clone(),
        )?);
        decisions.push(sampled.decisions);
        step_truth.push(sampled.step_truth);
        z.push(sampled.z);
        trajectories.push(parsed);
    }
    let batch = GroupBatch::from_trajectories(problem.id(), trajectories, &gold)?;
    Ok(RolloutGroup {
        batch,
        logprobs,
        decisions,
        step_truth,
        z,
    })
}

/// Recomputes the current-policy log-probabilities for fixed decisions (used
/// by off-policy replay, where the behavior snapshot stays at sampling
/// time).
pub fn recompute_current_logprobs(
    group: &RolloutGroup,
    policy: &ToyPolicy,
) -> Result<Vec<PolicyLogprobs<f64>>, ToyError> {
    group
        .logprobs
        .iter()
        .zip(&group.decisions)
        .map(|(lp, decisions)| {
            let mut current = vec![0.0; lp.len()];
            for d in decisions {
                current[d.token_index] = policy.logp(d.slot, d.chosen);
            }
            PolicyLogprobs::new(current, lp.behavior().to_vec(), lp.reference().to_vec())
                .map_err(ToyError::from)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::StepScore;
    use crate::toy::problem::gen_problem;
    use crate::trajectory::TraceMode;

    #[test]
    fn rollout_round_trips_through_parser() {
        let policy = ToyPolicy::uniform(1.0, TraceMode::Full);
        let problem = gen_problem(3);
        let group = rollout(&policy, &policy, &problem, 4, 9).unwrap();
        for (member, truth) in group.batch.members().iter().zip(&group.step_truth) {
            // One step per op plus the final answer statement.
            assert_eq!(member.trajectory.step_count(), problem.len() + 1);
            assert_eq!(truth.len(), problem.len() + 1);
            // Full mode: every step carries a valid critique.
            assert!(member.trajectory.validity_flags().iter().all(|v| *v));
            assert_eq!(member.rewards.r_format, 1.0);
            // Scores re-parse to the sampled structure.
            assert_eq!(
                member.rewards.step_scores.len(),
                member.trajectory.step_count()
            );
        }
    }

    #[test]
    fn compact_mode_has_zero_format_reward() {
        let policy = ToyPolicy::uniform(1.0, TraceMode::Compact);
        let problem = gen_problem(5);
        let group = rollout(&policy, &policy, &problem, 3, 1).unwrap();
        for member in group.batch.members() {
            assert_eq!(member.rewards.r_format, 0.0);
            assert!(member
                .rewards
                .step_scores
                .iter()
                .all(|s| *s == StepScore::Absent));
        }
    }

    #[test]
    fn deterministic_policy_gives_identical_trajectories() {
        let policy = ToyPolicy::oracle(TraceMode::Full);
        let problem = gen_problem(7);
        let group = rollout(&policy, &policy, &problem, 4, 2).unwrap();
        let first = group.batch.members()[0].trajectory.render(TraceMode::Full);
        for member in group.batch.members() {
            assert_eq!(member.trajectory.render(TraceMode::Full), first);
            assert_eq!(member.rewards.r_reason, 1);
            assert_eq!(member.rewards.r_crit, 1);
        }
        // All-equal rewards: every advantage is zero.
        let field = crate::advantage::total_field(
            &group.batch,
            &crate::advantage::AdvantageWeights::default(),
        )
        .unwrap();
        for row in &field.total {
            assert!(row.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn oracle_reward_monotone_under_gold_edits() {
        // Replacing a wrong step's emitted digit with the gold digit in the
        // trace text never decreases the reasoning reward.
        let policy = ToyPolicy::uniform(1.0, TraceMode::Full);
        let problem = gen_problem(11);
        let group = rollout(&policy, &policy, &problem, 6, 4).unwrap();
        let gold = CanonicalAnswer::Integer(problem.final_answer.into());
        for (member, _truth) in group.batch.members().iter().zip(&group.step_truth) {
            let before = member.rewards.r_reason;
            for (n, gold_value) in problem.intermediates.iter().enumerate() {
                let mut steps = member.trajectory.steps().to_vec();
                let reasoning = &mut steps[n].reasoning;
                if let Some(eq) = reasoning.rfind("= ") {
                    let mut fixed = reasoning[..eq + 2].to_string();
                    fixed.push_str(&gold_value.to_string());
                    *reasoning = fixed;
                }
                if n == problem.len() - 1 {
                    // The boxed restatement lives in the final step.
                    let last = steps.len() - 1;
                    steps[last].reasoning =
                        format!("The final answer is \\boxed{{{gold_value}}}.");
                }
                let edited = crate::trajectory::ParsedTrajectory::from_steps(steps);
                let after = crate::rewards::reasoning_reward(&edited, &gold);
                assert!(after >= before, "edit at step {n} decreased the reward");
            }
        }
    }

    #[test]
    fn rejects_multi_digit_problems() {
        let problem = super::super::problem::ToyProblem::from_chain(
            0,
            5,
            vec![(super::super::problem::Op::Mul, 9)],
        );
        let policy = ToyPolicy::uniform(1.0, TraceMode::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_trajectory(&policy, &policy, &problem, &mut rng);
        assert!(matches!(err, Err(ToyError::ValueOutOfRange { value: 45 })));
    }
}
