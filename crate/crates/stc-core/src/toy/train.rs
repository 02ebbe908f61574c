//! The desk-scale training loop: sample problems, roll out groups, compute
//! rewards and advantages, evaluate the clipped objective, and ascend the
//! policy logits. Fully deterministic given the run seed.

use super::policy::{PolicyGradient, PolicySnapshot, ToyPolicy};
use super::problem::gen_problem_in;
use super::rollout::{recompute_current_logprobs, rollout, RolloutGroup};
use super::{derive_seed, ToyError, STREAM_EVAL, STREAM_HELDOUT, STREAM_PROBLEM, STREAM_ROLLOUT};
use crate::advantage::{total_field, AdvantageWeights};
use crate::eval::{critique_metrics, pass_at_n, CritiqueMetrics, ProblemSamples, Sample};
use crate::grpo::{grpo_objective, ClipConfig};
use crate::rewards::{RewardBundle, StepScore};
use crate::trajectory::{parse_trace, TraceMode};
use crate::verifier::{canonicalize, CanonicalAnswer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Full training-run configuration. Defaults follow the reference setup:
/// group size 16, lambda_format 0.05, lambda_dense 0.5.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub group_size: usize,
    pub problems_per_iter: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    /// "full" or "compact".
    pub mode: String,
    pub chain_len_min: usize,
    pub chain_len_max: usize,
    pub lambda_crit: f64,
    pub lambda_reason: f64,
    pub lambda_format: f64,
    pub lambda_dense: f64,
    pub epsilon: f64,
    pub beta: f64,
    /// Gradient steps per rollout batch; 1 is fully on-policy.
    pub updates_per_rollout: usize,
    pub heldout_problems: usize,
    pub heldout_samples: usize,
    /// Snapshot the policy every N iterations (0 = final only).
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 2000,
            group_size: 16,
            problems_per_iter: 8,
            learning_rate: 2.0,
            temperature: 1.0,
            mode: "full".to_string(),
            chain_len_min: 2,
            chain_len_max: 6,
            lambda_crit: 1.0,
            lambda_reason: 1.0,
            lambda_format: 0.05,
            lambda_dense: 0.5,
            epsilon: 0.2,
            beta: 0.001,
            updates_per_rollout: 1,
            heldout_problems: 500,
            heldout_samples: 8,
            snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn trace_mode(&self) -> Result<TraceMode, ToyError> {
        match self.mode.as_str() {
            "full" => Ok(TraceMode::Full),
            "compact" => Ok(TraceMode::Compact),
            other => Err(ToyError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }

    pub fn weights(&self) -> AdvantageWeights<f64> {
        AdvantageWeights {
            lambda_crit: self.lambda_crit,
            lambda_reason: self.lambda_reason,
            lambda_format: self.lambda_format,
            lambda_dense: self.lambda_dense,
        }
    }

    pub fn clip(&self) -> ClipConfig<f64> {
        ClipConfig {
            epsilon: self.epsilon,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        if self.group_size < 2 {
            return Err(ToyError::InvalidConfig(
                "group_size must be at least 2".into(),
            ));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(ToyError::InvalidConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(ToyError::InvalidConfig("temperature must be > 0".into()));
        }
        if self.chain_len_min < 1 || self.chain_len_min > self.chain_len_max {
            return Err(ToyError::InvalidConfig("bad chain length range".into()));
        }
        if self.problems_per_iter == 0 || self.updates_per_rollout == 0 {
            return Err(ToyError::InvalidConfig(
                "problems_per_iter and updates_per_rollout must be positive".into(),
            ));
        }
        self.weights().validate().map_err(ToyError::from)?;
        self.clip().validate().map_err(ToyError::from)?;
        self.trace_mode().map(|_| ())
    }
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub reasoning_accuracy: f64,
    pub critique_consistency: f64,
    pub format_reward: f64,
    pub objective: f64,
}

/// Held-out evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_problems: usize,
    pub samples_per_problem: usize,
    pub pass_at_1: f64,
    pub pass_at_8: Option<f64>,
    pub reasoning_accuracy: f64,
    pub critique_consistency: f64,
    pub answer_metrics: CritiqueMetrics,
    pub process_metrics: CritiqueMetrics,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<IterationMetrics>,
    pub heldout: EvalReport,
    pub policy: ToyPolicy,
    pub snapshots: Vec<(usize, PolicySnapshot)>,
}

fn accumulate_group_gradient(
    grad: &mut PolicyGradient,
    policy: &ToyPolicy,
    group: &RolloutGroup,
    coefficients: &[Vec<f64>],
) {
    for (decisions, coeffs) in group.decisions.iter().zip(coefficients) {
        for d in decisions {
            grad.add_decision(policy, d.slot, d.chosen, coeffs[d.token_index]);
        }
    }
}

/// Runs the full loop. Deterministic in `cfg.seed`; errors with the
/// iteration index if the parameters stop being finite.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, ToyError> {
    cfg.validate()?;
    let mode = cfg.trace_mode()?;
    let weights = cfg.weights();
    let clip = cfg.clip();
    let mut policy = ToyPolicy::uniform(cfg.temperature, mode);
    let reference = policy.clone();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut snapshots = Vec::new();

    for iteration in 0..cfg.iterations {
        let mut groups = Vec::with_capacity(cfg.problems_per_iter);
        for p in 0..cfg.problems_per_iter {
            let problem_seed = derive_seed(cfg.seed, STREAM_PROBLEM, iteration as u64, p as u64);
            let problem = gen_problem_in(problem_seed, cfg.chain_len_min, cfg.chain_len_max);
            let rollout_seed = derive_seed(cfg.seed, STREAM_ROLLOUT, iteration as u64, p as u64);
            groups.push(rollout(
                &policy,
                &reference,
                &problem,
                cfg.group_size,
                rollout_seed,
            )?);
        }

        // Advantage fields depend only on sampled rewards, never on theta.
        let fields: Vec<_> = groups
            .iter()
            .map(|g| total_field(&g.batch, &weights))
            .collect::<Result<_, _>>()?;

        let mut first_pass_objective = 0.0;
        for update in 0..cfg.updates_per_rollout {
            let mut grad = PolicyGradient::zero();
            let mut objective_sum = 0.0;
            for (group, field) in groups.iter().zip(&fields) {
                let logprobs = if update == 0 {
                    group.logprobs.clone()
                } else {
                    recompute_current_logprobs(group, &policy)?
                };
                let eval = grpo_objective(&group.batch, field, &logprobs, &clip)?;
                objective_sum += eval.objective;
                accumulate_group_gradient(&mut grad, &policy, group, &eval.grad_logp_current);
            }
            if update == 0 {
                first_pass_objective = objective_sum / cfg.problems_per_iter as f64;
            }
            grad.scale(1.0 / cfg.problems_per_iter as f64);
            grad.apply_to(&mut policy, cfg.learning_rate);
            if !policy.all_finite() {
                return Err(ToyError::Diverged { iteration });
            }
        }

        let mut n = 0usize;
        let (mut acc, mut crit, mut format) = (0.0, 0.0, 0.0);
        for group in &groups {
            for member in group.batch.members() {
                acc += member.rewards.r_reason as f64;
                crit += member.rewards.r_crit as f64;
                format += member.rewards.r_format;
                n += 1;
            }
        }
        let n = n as f64;
        history.push(IterationMetrics {
            iteration,
            reasoning_accuracy: acc / n,
            critique_consistency: crit / n,
            format_reward: format / n,
            objective: first_pass_objective,
        });

        if cfg.snapshot_every > 0 && (iteration + 1) % cfg.snapshot_every == 0 {
            snapshots.push((iteration + 1, policy.snapshot()));
        }
    }

    let heldout = evaluate_policy(
        &policy,
        cfg.heldout_problems,
        cfg.heldout_samples,
        cfg.chain_len_min,
        cfg.chain_len_max,
        derive_seed(cfg.seed, STREAM_HELDOUT, 0, 0),
    )?;

    Ok(TrainOutcome {
        history,
        heldout,
        policy,
        snapshots,
    })
}

/// Samples `samples_per_problem` trajectories on fresh problems and reports
/// Pass@1/Pass@8, answer-level critique metrics, and process-level critique
/// metrics against the exact toy ground truth.
pub fn evaluate_policy(
    policy: &ToyPolicy,
    n_problems: usize,
    samples_per_problem: usize,
    chain_len_min: usize,
    chain_len_max: usize,
    seed: u64,
) -> Result<EvalReport, ToyError> {
    let mut problems = Vec::with_capacity(n_problems);
    let mut consistency_hits = 0usize;
    let mut consistency_total = 0usize;
    let mut answer_preds = Vec::new();
    let mut answer_labels = Vec::new();
    let mut process_preds = Vec::new();
    let mut process_labels = Vec::new();

    for i in 0..n_problems {
        let problem_seed = derive_seed(seed, STREAM_HELDOUT, i as u64, 1);
        let problem = gen_problem_in(problem_seed, chain_len_min, chain_len_max);
        let gold = CanonicalAnswer::Integer(problem.final_answer.into());
        let mut samples = Vec::with_capacity(samples_per_problem);
        for j in 0..samples_per_problem {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                STREAM_EVAL,
                i as u64,
                j as u64,
            ));
            let sampled = super::rollout::sample_trajectory(policy, policy, &problem, &mut rng)?;
            let parsed = parse_trace(&sampled.text)?;
            let bundle = RewardBundle::<f64>::compute(&parsed, &gold);

            consistency_hits += bundle.r_crit as usize;
            consistency_total += 1;

            let final_score = bundle
                .step_scores
                .last()
                .and_then(|s| match s {
                    StepScore::Score(v) => Some(*v),
                    StepScore::Absent => None,
                });
            answer_preds.push(final_score.unwrap_or(0));
            answer_labels.push(u8::from(sampled.z));

            for (score, truth) in bundle.step_scores.iter().zip(&sampled.step_truth) {
                let pred = match score {
                    StepScore::Score(v) => *v,
                    StepScore::Absent => 0,
                };
                process_preds.push(pred);
                process_labels.push(u8::from(*truth));
            }

            let answer = parsed
                .final_answer()
                .and_then(|a| canonicalize(a).ok());
            samples.push(Sample {
                answer,
                final_score,
                step_scores: Some(
                    bundle
                        .step_scores
                        .iter()
                        .map(|s| match s {
                            StepScore::Score(v) => *v,
                            StepScore::Absent => 0,
                        })
                        .collect(),
                ),
                gold_step_labels: Some(
                    sampled.step_truth.iter().map(|t| u8::from(*t)).collect(),
                ),
            });
        }
        problems.push(ProblemSamples {
            problem_id: problem.id(),
            gold,
            samples,
        });
    }

    let pass_at_1 = pass_at_n(&problems, 1).map_err(|e| ToyError::InvalidConfig(e.to_string()))?;
    let pass_at_8 = if samples_per_problem >= 8 {
        Some(pass_at_n(&problems, 8).map_err(|e| ToyError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let answer_metrics = critique_metrics(&answer_preds, &answer_labels)
        .map_err(|e| ToyError::InvalidConfig(e.to_string()))?;
    let process_metrics = critique_metrics(&process_preds, &process_labels)
        .map_err(|e| ToyError::InvalidConfig(e.to_string()))?;

    Ok(EvalReport {
        n_problems,
        samples_per_problem,
        pass_at_1,
        pass_at_8,
        reasoning_accuracy: pass_at_1,
        critique_consistency: consistency_hits as f64 / consistency_total.max(1) as f64,
        answer_metrics,
        process_metrics,
    })
}
