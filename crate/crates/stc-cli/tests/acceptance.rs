//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (visible with `--nocapture`; failures always show).
//!
//! 1. Formula oracle suite over randomized groups (< 1e-10, < 10 s)
//! 2. Grammar corpus (golden full/compact traces)
//! 3. Gradient soundness vs central finite differences (< 1e-5, < 30 s)
//! 4. Normalization invariants on 10^4 randomized cases
//! 5. End-to-end toy training thresholds + dense-reward ablation (< 5 min)
//! 6. Test-time scaling trend at 3 sigma over 10^4 trials (< 60 s)
//! 7. Byte-identical pipeline determinism (synth-sft, eval, train-toy)
//! 8. Metric definitions (hand-computed confusion cases)

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;
use stc_core::advantage::{total_field, AdvantageWeights, GroupBatch};
use stc_core::eval::{
    best_of_k_critique, critique_metrics, majority_vote, synthetic_ensemble, EnsembleConfig,
};
use stc_core::grpo::{grpo_objective_with_counts, ClipConfig, PolicyLogprobs};
use stc_core::rewards::StepScore;
use stc_core::toy::{
    recompute_current_logprobs, rollout, train, gen_problem, PolicyGradient, ToyPolicy,
    TrainConfig,
};
use stc_core::trajectory::{parse_str, TokenLabel, TraceMode};
use stc_core::verifier::{answers_equal, canonicalize};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../fixtures/{name}"))
}

// ======================================================================
// Criterion 1: formula oracle suite
// ======================================================================

#[derive(Clone, Debug)]
struct StepIntent {
    critique: Option<(bool, u8)>, // (well-formed, score)
}

#[derive(Clone, Debug)]
struct TrajIntent {
    steps: Vec<StepIntent>,
    boxed: Option<i64>,
}

fn render_intent(intent: &TrajIntent, traj_tag: usize) -> String {
    let last = intent.steps.len() - 1;
    intent
        .steps
        .iter()
        .enumerate()
        .map(|(n, step)| {
            let mut text = format!("step {n} of trajectory {traj_tag} computes value {}", n * 3 + 1);
            if n == last {
                if let Some(v) = intent.boxed {
                    text.push_str(&format!(" so the answer is \\boxed{{{v}}}"));
                }
            }
            match &step.critique {
                Some((true, score)) => {
                    format!("{text}\n<critic>checked step {n}</critic> <score>{score}</score>")
                }
                Some((false, _)) => {
                    format!("{text}\n<critic>checked step {n}</critic> <score>maybe</score>")
                }
                None => text,
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

struct OracleBundle {
    r_reason: f64,
    r_crit: f64,
    r_format: f64,
    dense_rewards: Vec<f64>, // absent -> 0
}

fn oracle_bundle(intent: &TrajIntent, gold: i64) -> OracleBundle {
    let t = intent.steps.len() as f64;
    let valid: Vec<bool> = intent
        .steps
        .iter()
        .map(|s| matches!(s.critique, Some((true, _))))
        .collect();
    let r_reason = match intent.boxed {
        Some(v) if v == gold => 1.0,
        _ => 0.0,
    };
    let z = r_reason as u8;
    let last = intent.steps.len() - 1;
    let r_crit = match intent.steps[last].critique {
        Some((true, score)) if score == z => 1.0,
        _ => 0.0,
    };
    let r_format = valid.iter().filter(|v| **v).count() as f64 / t;
    let dense_rewards = intent
        .steps
        .iter()
        .map(|s| match s.critique {
            Some((true, score)) => score as f64,
            _ => 0.0,
        })
        .collect();
    OracleBundle {
        r_reason,
        r_crit,
        r_format,
        dense_rewards,
    }
}

fn oracle_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || values.iter().all(|v| *v == values[0]) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

#[test]
fn criterion_1_formula_oracle_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce111);
    let weights = AdvantageWeights::<f64> {
        lambda_crit: 1.0,
        lambda_reason: 1.0,
        lambda_format: 0.05,
        lambda_dense: 0.5,
    };
    let mut max_dev = 0.0f64;
    let n_groups = 1000;

    for case in 0..n_groups {
        let group_size = rng.gen_range(2..=8);
        let gold: i64 = rng.gen_range(1..=20);
        let intents: Vec<TrajIntent> = (0..group_size)
            .map(|_| {
                let t = rng.gen_range(1..=6);
                let steps = (0..t)
                    .map(|_| StepIntent {
                        critique: match rng.gen_range(0..4) {
                            0 => None,
                            1 => Some((false, 0)),
                            _ => Some((true, rng.gen_range(0..=1u8))),
                        },
                    })
                    .collect();
                let boxed = match rng.gen_range(0..3) {
                    0 => None,
                    1 => Some(gold),
                    _ => Some(gold + rng.gen_range(1..=5)),
                };
                TrajIntent { steps, boxed }
            })
            .collect();

        let texts: Vec<String> = intents
            .iter()
            .enumerate()
            .map(|(k, i)| render_intent(i, k))
            .collect();
        let trajectories: Vec<_> = texts.iter().map(|t| parse_str(t).unwrap()).collect();
        let gold_canonical = canonicalize(&gold.to_string()).unwrap();
        let batch = GroupBatch::<f64>::from_trajectories(
            format!("case-{case}"),
            trajectories,
            &gold_canonical,
        )
        .unwrap();

        // Reward bundles against the oracle.
        let oracles: Vec<OracleBundle> = intents.iter().map(|i| oracle_bundle(i, gold)).collect();
        for (member, oracle) in batch.members().iter().zip(&oracles) {
            max_dev = max_dev.max((member.rewards.r_reason as f64 - oracle.r_reason).abs());
            max_dev = max_dev.max((member.rewards.r_crit as f64 - oracle.r_crit).abs());
            max_dev = max_dev.max((member.rewards.r_format - oracle.r_format).abs());
            let dense: Vec<f64> = member
                .rewards
                .step_scores
                .iter()
                .map(|s| match s {
                    StepScore::Score(v) => *v as f64,
                    StepScore::Absent => 0.0,
                })
                .collect();
            assert_eq!(dense, oracle.dense_rewards, "case {case}");
        }

        // Advantage field against a from-scratch evaluation.
        let field = total_field(&batch, &weights).unwrap();
        let r_crit: Vec<f64> = oracles.iter().map(|o| o.r_crit).collect();
        let r_reason: Vec<f64> = oracles.iter().map(|o| o.r_reason).collect();
        let r_format: Vec<f64> = oracles.iter().map(|o| o.r_format).collect();
        let a_crit = oracle_normalize(&r_crit);
        let a_reason = oracle_normalize(&r_reason);
        let a_format = oracle_normalize(&r_format);

        let pooled: Vec<f64> = oracles.iter().flat_map(|o| o.dense_rewards.clone()).collect();
        let pooled_norm = oracle_normalize(&pooled);
        let mut offset = 0usize;
        let mut dense_steps: Vec<Vec<f64>> = Vec::new();
        for o in &oracles {
            let t = o.dense_rewards.len();
            let slice = &pooled_norm[offset..offset + t];
            offset += t;
            // Suffix sums, written as the plain double loop.
            let mut suffix = vec![0.0; t];
            for n in 0..t {
                let mut acc = 0.0;
                for v in &slice[n..] {
                    acc += v;
                }
                suffix[n] = acc;
            }
            dense_steps.push(suffix);
        }

        for (k, member) in batch.members().iter().enumerate() {
            let labels = member.trajectory.token_labels();
            let n_tokens = labels.len() as f64;
            let n_crit = labels
                .iter()
                .filter(|l| matches!(l, TokenLabel::CritiqueBody(_)))
                .count() as f64;
            for (t, label) in labels.iter().enumerate() {
                let crit_term = match label {
                    TokenLabel::CritiqueBody(_) if n_crit > 0.0 => {
                        weights.lambda_crit * (n_tokens / n_crit) * a_crit[k]
                    }
                    _ => 0.0,
                };
                let dense_term = match label {
                    TokenLabel::Reasoning(step) => {
                        weights.lambda_dense * dense_steps[k][*step - 1]
                    }
                    _ => 0.0,
                };
                let expected = crit_term
                    + weights.lambda_reason * a_reason[k]
                    + weights.lambda_format * a_format[k]
                    + dense_term;
                let dev = (field.total[k][t] - expected).abs();
                max_dev = max_dev.max(dev);
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(
        max_dev < 1e-10,
        "max deviation {max_dev} exceeds 1e-10"
    );
    assert!(elapsed.as_secs_f64() < 10.0, "runtime {elapsed:?} exceeds 10 s");
    println!(
        "[PASS] criterion 1: formula oracle suite — {n_groups} groups, max deviation {max_dev:.3e}, {elapsed:?}"
    );
}

// ======================================================================
// Criterion 2: grammar corpus
// ======================================================================

#[test]
fn criterion_2_grammar_corpus() {
    let table3: Vec<stc_core::records::TraceRecord> =
        stc_core::records::read_jsonl(&fixture("table3.jsonl")).unwrap();
    let traj = parse_str(&table3[0].text).unwrap();
    assert_eq!(traj.step_count(), 14, "full trace step count");
    let zeros = traj
        .steps()
        .iter()
        .filter(|s| {
            s.critique.as_ref().is_some_and(|c| {
                c.valid && c.score == stc_core::trajectory::CritiqueScore::Incorrect
            })
        })
        .count();
    assert_eq!(zeros, 1, "exactly one score-0 step");
    assert_eq!(traj.final_answer(), Some("25"));
    assert_eq!(traj.render(TraceMode::Full), table3[0].text, "full round trip");

    let table4: Vec<stc_core::records::TraceRecord> =
        stc_core::records::read_jsonl(&fixture("table4_compact.jsonl")).unwrap();
    let compact = parse_str(&table4[0].text).unwrap();
    assert_eq!(compact.step_count(), 9, "compact trace step count");
    assert_eq!(compact.final_answer(), Some("25"));
    assert!(compact.steps().iter().all(|s| s.critique.is_none()));
    let rendered = compact.render(TraceMode::Compact);
    assert_eq!(rendered, table4[0].text, "compact round trip");
    let reparsed = parse_str(&rendered).unwrap();
    assert_eq!(reparsed.render(TraceMode::Compact), rendered);

    println!(
        "[PASS] criterion 2: grammar corpus — full trace T=14 with one score-0 step, answer 25, compact T=9 round-trips byte-identically"
    );
}

// ======================================================================
// Criterion 3: gradient soundness
// ======================================================================

fn fd_check_objective(
    token_counts: &[usize],
    field: &stc_core::advantage::AdvantageField<f64>,
    current: &[Vec<f64>],
    behavior: &[Vec<f64>],
    reference: &[Vec<f64>],
    cfg: &ClipConfig<f64>,
) -> f64 {
    let build = |cur: &[Vec<f64>]| -> Vec<PolicyLogprobs<f64>> {
        cur.iter()
            .zip(behavior)
            .zip(reference)
            .map(|((c, b), r)| PolicyLogprobs::new(c.clone(), b.clone(), r.clone()).unwrap())
            .collect()
    };
    let eval =
        grpo_objective_with_counts(token_counts, field, &build(current), cfg).unwrap();
    // h = 1e-5 balances cancellation noise (~eps|J|/h ~ 1e-11) against
    // truncation (~h^2 ~ 1e-10 of the local curvature scale).
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..current.len() {
        for t in 0..current[k].len() {
            let mut plus = current.to_vec();
            plus[k][t] += h;
            let mut minus = current.to_vec();
            minus[k][t] -= h;
            let fd = (grpo_objective_with_counts(token_counts, field, &build(&plus), cfg)
                .unwrap()
                .objective
                - grpo_objective_with_counts(token_counts, field, &build(&minus), cfg)
                    .unwrap()
                    .objective)
                / (2.0 * h);
            let analytic = eval.grad_logp_current[k][t];
            let denom = analytic.abs().max(fd.abs());
            if denom < 1e-6 {
                // Below the central-difference noise floor (~1e-10 here) a
                // relative comparison only measures cancellation error, so
                // assert absolute agreement instead.
                assert!(
                    (analytic - fd).abs() < 1e-9,
                    "near-zero gradient disagrees: analytic {analytic} vs fd {fd}"
                );
                continue;
            }
            worst = worst.max(((analytic - fd) / denom).abs());
        }
    }
    worst
}

#[test]
fn criterion_3_gradient_soundness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x97ad_u64);
    let epsilon = 0.2;
    let mut worst = 0.0f64;

    // Direct objective-gradient checks on 100 random configurations.
    for case in 0..100 {
        let beta = [0.0, 0.001, 0.1][case % 3];
        let cfg = ClipConfig { epsilon, beta };
        let group_size = rng.gen_range(2..=4);
        let mut token_counts = Vec::new();
        let mut current = Vec::new();
        let mut behavior = Vec::new();
        let mut reference = Vec::new();
        let mut totals = Vec::new();
        for _ in 0..group_size {
            let n = rng.gen_range(3..=12);
            token_counts.push(n);
            let mut cur = Vec::with_capacity(n);
            let mut beh = Vec::with_capacity(n);
            let mut refr = Vec::with_capacity(n);
            let mut adv = Vec::with_capacity(n);
            for _ in 0..n {
                // Keep the importance ratio in (e^-0.7, e^0.7) so both clip
                // regions are exercised without blowing up objective
                // magnitudes, and away from the kinks at 1 -/+ eps.
                let (c, b) = loop {
                    let b: f64 = rng.gen_range(-3.0..-0.8);
                    let c: f64 = b + rng.gen_range(-0.7..0.7);
                    let rho = (c - b).exp();
                    if c < 0.0
                        && (rho - (1.0 - epsilon)).abs() > 0.05
                        && (rho - (1.0 + epsilon)).abs() > 0.05
                    {
                        break (c, b);
                    }
                };
                cur.push(c);
                beh.push(b);
                refr.push(rng.gen_range(-3.0..-0.05));
                adv.push(rng.gen_range(-2.0..2.0));
            }
            current.push(cur);
            behavior.push(beh);
            reference.push(refr);
            totals.push(adv);
        }
        let zeros: Vec<Vec<f64>> = totals.iter().map(|r| vec![0.0; r.len()]).collect();
        let field = stc_core::advantage::AdvantageField {
            critique: zeros.clone(),
            reasoning: zeros.clone(),
            format: zeros.clone(),
            dense: zeros.clone(),
            combined: zeros,
            total: totals,
        };
        worst = worst.max(fd_check_objective(
            &token_counts,
            &field,
            &current,
            &behavior,
            &reference,
            &cfg,
        ));
    }
    assert!(worst < 1e-5, "objective gradient worst relative error {worst}");

    // End-to-end: chain through the softmax Jacobian of the toy policy.
    let mut worst_e2e = 0.0f64;
    for case in 0..10 {
        let mut behavior_policy = ToyPolicy::uniform(1.0, TraceMode::Full);
        let mut params = behavior_policy.flat_params();
        for p in params.iter_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
        behavior_policy.set_flat_params(&params);
        let problem = gen_problem(1000 + case as u64);
        let group = rollout(&behavior_policy, &behavior_policy, &problem, 4, 77 + case as u64)
            .unwrap();
        let weights = AdvantageWeights::default();
        let field = total_field(&group.batch, &weights).unwrap();
        let cfg = ClipConfig { epsilon: 0.2, beta: 0.01 };

        // Current policy perturbed off the behavior snapshot, small enough
        // that no ratio sits near a clip kink.
        let mut current_policy = behavior_policy.clone();
        let mut cur_params = current_policy.flat_params();
        for p in cur_params.iter_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        current_policy.set_flat_params(&cur_params);

        let objective_at = |policy: &ToyPolicy| -> f64 {
            let lps = recompute_current_logprobs(&group, policy).unwrap();
            grpo_objective_with_counts(&group.batch.token_counts(), &field, &lps, &cfg)
                .unwrap()
                .objective
        };

        let lps = recompute_current_logprobs(&group, &current_policy).unwrap();
        let eval =
            grpo_objective_with_counts(&group.batch.token_counts(), &field, &lps, &cfg).unwrap();
        let mut grad = PolicyGradient::zero();
        for (decisions, coeffs) in group.decisions.iter().zip(&eval.grad_logp_current) {
            for d in decisions {
                grad.add_decision(&current_policy, d.slot, d.chosen, coeffs[d.token_index]);
            }
        }
        let analytic = grad.flat();

        let h = 1e-5;
        for i in 0..cur_params.len() {
            let mut plus = current_policy.clone();
            let mut p = cur_params.clone();
            p[i] += h;
            plus.set_flat_params(&p);
            let mut minus = current_policy.clone();
            let mut m = cur_params.clone();
            m[i] -= h;
            minus.set_flat_params(&m);
            let fd = (objective_at(&plus) - objective_at(&minus)) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs());
            if denom < 1e-6 {
                assert!(
                    (analytic[i] - fd).abs() < 1e-9,
                    "near-zero logit gradient disagrees: analytic {} vs fd {fd}",
                    analytic[i]
                );
                continue;
            }
            worst_e2e = worst_e2e.max(((analytic[i] - fd) / denom).abs());
        }
    }
    assert!(worst_e2e < 1e-5, "end-to-end gradient worst relative error {worst_e2e}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "runtime {elapsed:?} exceeds 30 s");
    println!(
        "[PASS] criterion 3: gradient soundness — objective worst rel err {worst:.3e}, end-to-end worst rel err {worst_e2e:.3e}, {elapsed:?}"
    );
}

// ======================================================================
// Criterion 4: normalization invariants (10^4 cases)
// ======================================================================

#[test]
fn criterion_4_normalization_invariants() {
    use stc_core::advantage::{dense_step_advantages, group_normalize};
    let mut rng = ChaCha8Rng::seed_from_u64(0x4041);
    let cases = 10_000;
    for case in 0..cases {
        let n = rng.gen_range(2..=12);
        let all_equal = case % 7 == 0;
        let base: f64 = rng.gen_range(-5.0..5.0);
        let values: Vec<f64> = (0..n)
            .map(|_| if all_equal { base } else { rng.gen_range(-5.0..5.0) })
            .collect();
        let normalized = group_normalize(&values).unwrap();
        if values.iter().all(|v| *v == values[0]) {
            assert!(normalized.iter().all(|v| *v == 0.0), "zero-variance guard");
        } else {
            let nf = n as f64;
            let mean = normalized.iter().sum::<f64>() / nf;
            let var = normalized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
            assert!(mean.abs() < 1e-12, "case {case}: mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "case {case}: std {}", var.sqrt());
            // Positive-affine invariance.
            let a: f64 = rng.gen_range(0.1..4.0);
            let b: f64 = rng.gen_range(-3.0..3.0);
            let transformed: Vec<f64> = values.iter().map(|v| a * v + b).collect();
            let renorm = group_normalize(&transformed).unwrap();
            for (x, y) in normalized.iter().zip(&renorm) {
                assert!((x - y).abs() < 1e-9, "case {case}: affine invariance");
            }
        }
    }

    // Mask disjointness and the suffix-sum recurrence on sampled rollouts.
    let policy = ToyPolicy::uniform(1.0, TraceMode::Full);
    let weights = AdvantageWeights::default();
    for i in 0..50 {
        let problem = gen_problem(5000 + i);
        let group = rollout(&policy, &policy, &problem, 4, i).unwrap();
        let field = total_field(&group.batch, &weights).unwrap();
        let dense = dense_step_advantages(&group.batch).unwrap();
        for (k, member) in group.batch.members().iter().enumerate() {
            for (t, label) in member.trajectory.token_labels().iter().enumerate() {
                if field.critique[k][t] != 0.0 {
                    assert!(matches!(label, TokenLabel::CritiqueBody(_)), "mask soundness");
                }
            }
            let row = &dense[k];
            for n in 0..row.len() {
                let next = if n + 1 < row.len() { row[n + 1] } else { 0.0 };
                let normalized = row[n] - next;
                assert_eq!(normalized + next, row[n], "suffix recurrence");
            }
        }
    }
    println!(
        "[PASS] criterion 4: normalization invariants — {cases} randomized cases plus mask/suffix checks on 50 rollout groups"
    );
}

// ======================================================================
// Criterion 5: end-to-end toy training + ablation
// ======================================================================

#[test]
fn criterion_5_toy_training_with_ablation() {
    let start = Instant::now();
    let default_cfg = TrainConfig::default();
    assert_eq!(default_cfg.group_size, 16);
    assert_eq!(default_cfg.lambda_format, 0.05);
    assert_eq!(default_cfg.lambda_dense, 0.5);
    assert!(default_cfg.iterations <= 2000);

    let default_run = train(&default_cfg).unwrap();
    let ablation_cfg = TrainConfig {
        lambda_dense: 0.0,
        ..TrainConfig::default()
    };
    let ablation_run = train(&ablation_cfg).unwrap();
    let elapsed = start.elapsed();

    let acc = default_run.heldout.reasoning_accuracy;
    let crit = default_run.heldout.critique_consistency;
    assert!(acc >= 0.90, "held-out reasoning accuracy {acc} < 0.90");
    assert!(crit >= 0.90, "held-out critique consistency {crit} < 0.90");
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "both runs took {elapsed:?}, budget is 5 minutes"
    );

    // The dense term must be live: same seed, different objective history.
    let diverged = default_run
        .history
        .iter()
        .zip(&ablation_run.history)
        .any(|(a, b)| a.objective != b.objective);
    assert!(diverged, "lambda_dense = 0 ablation produced an identical run");

    // Frozen reference values; small tolerance absorbs platform libm noise.
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("golden/train_default.json")).unwrap())
            .unwrap();
    let tol = 0.02;
    let g_acc = golden["default"]["heldout_reasoning_accuracy"].as_f64().unwrap();
    let g_crit = golden["default"]["heldout_critique_consistency"].as_f64().unwrap();
    let g_abl = golden["ablation_lambda_dense_0"]["heldout_reasoning_accuracy"]
        .as_f64()
        .unwrap();
    assert!((acc - g_acc).abs() < tol, "accuracy {acc} vs golden {g_acc}");
    assert!((crit - g_crit).abs() < tol, "consistency {crit} vs golden {g_crit}");
    assert!(
        (ablation_run.heldout.reasoning_accuracy - g_abl).abs() < tol,
        "ablation accuracy {} vs golden {g_abl}",
        ablation_run.heldout.reasoning_accuracy
    );

    println!(
        "[PASS] criterion 5: toy training — heldout accuracy {acc:.4}, consistency {crit:.4} (ablation accuracy {:.4}), two 2000-iteration runs in {elapsed:?}",
        ablation_run.heldout.reasoning_accuracy
    );
}

// ======================================================================
// Criterion 6: test-time scaling trend
// ======================================================================

#[test]
fn criterion_6_test_time_scaling_trend() {
    let start = Instant::now();
    let trials = 10_000;
    for &k in &[4usize, 8, 16] {
        let cfg = EnsembleConfig {
            k,
            p_correct: 0.35,
            wrong_correlation: 1.0,
            critique_accuracy: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x600d + k as u64);
        let mut majority_hits = 0usize;
        let mut bok_hits = 0usize;
        let mut pass_hits = 0usize;
        let mut diff_sum = 0.0f64;
        let mut diff_sq = 0.0f64;
        for _ in 0..trials {
            let problem = synthetic_ensemble(&cfg, &mut rng);
            let any_correct = problem
                .samples
                .iter()
                .any(|s| s.answer.as_ref().is_some_and(|a| answers_equal(a, &problem.gold)));
            let maj = majority_vote(&problem.samples)
                .map(|a| answers_equal(&a, &problem.gold))
                .unwrap_or(false);
            let bok = best_of_k_critique(&problem.samples)
                .map(|a| answers_equal(&a, &problem.gold))
                .unwrap_or(false);
            majority_hits += usize::from(maj);
            bok_hits += usize::from(bok);
            pass_hits += usize::from(any_correct);
            let d = f64::from(bok) - f64::from(maj);
            diff_sum += d;
            diff_sq += d * d;
            // Selection can never beat the any-correct oracle.
            assert!(u8::from(bok) <= u8::from(any_correct));
        }
        let n = trials as f64;
        let mean_diff = diff_sum / n;
        let var_diff = diff_sq / n - mean_diff * mean_diff;
        let se = (var_diff / n).sqrt();
        assert!(
            mean_diff > 3.0 * se,
            "K={k}: best-of-K ({bok_hits}) does not beat majority ({majority_hits}) at 3 sigma"
        );
        assert!(bok_hits <= pass_hits, "K={k}: selection above the Pass@K bound");

        // Oracle critiques: selection equals Pass@K exactly, per trial.
        let oracle_cfg = EnsembleConfig {
            critique_accuracy: 1.0,
            ..cfg
        };
        let mut oracle_rng = ChaCha8Rng::seed_from_u64(0x0c1e + k as u64);
        for _ in 0..trials {
            let problem = synthetic_ensemble(&oracle_cfg, &mut oracle_rng);
            let any_correct = problem
                .samples
                .iter()
                .any(|s| s.answer.as_ref().is_some_and(|a| answers_equal(a, &problem.gold)));
            let bok = best_of_k_critique(&problem.samples)
                .map(|a| answers_equal(&a, &problem.gold))
                .unwrap_or(false);
            assert_eq!(bok, any_correct, "oracle selection must equal Pass@{k}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "runtime {elapsed:?} exceeds 60 s");
    println!(
        "[PASS] criterion 6: test-time scaling — best-of-K beats majority at 3 sigma for K in {{4, 8, 16}} over {trials} trials; oracle critiques equal Pass@K exactly; {elapsed:?}"
    );
}

// ======================================================================
// Criterion 7: pipeline determinism (byte-identical outputs)
// ======================================================================

fn run_stc(args: &[&str]) -> (String, bool) {
    let output = Command::new(env!("CARGO_BIN_EXE_stc"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        String::from_utf8_lossy(&output.stdout).to_string(),
        output.status.success(),
    )
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn criterion_7_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let traces = fixture("traces_sample.jsonl");
    let gold = fixture("gold_sample.jsonl");
    let annotations = fixture("annotations_sample.jsonl");

    // synth-sft twice.
    let mut corpus_bytes = Vec::new();
    let mut report_bytes = Vec::new();
    for run in 0..2 {
        let corpus = dir.path().join(format!("corpus_{run}.jsonl"));
        let report = dir.path().join(format!("report_{run}.json"));
        let (_, ok) = run_stc(&[
            "synth-sft",
            "--traces",
            traces.to_str().unwrap(),
            "--gold",
            gold.to_str().unwrap(),
            "--annotations",
            annotations.to_str().unwrap(),
            "--out",
            corpus.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ]);
        assert!(ok, "synth-sft run {run} failed");
        corpus_bytes.push(read_bytes(&corpus));
        report_bytes.push(read_bytes(&report));
    }
    assert_eq!(corpus_bytes[0], corpus_bytes[1], "synth-sft corpus differs");
    assert_eq!(report_bytes[0], report_bytes[1], "synth-sft report differs");

    // eval twice.
    let samples = fixture("samples_sample.jsonl");
    let eval_args = [
        "eval",
        "--input",
        samples.to_str().unwrap(),
        "--metrics",
        "pass@1,pass@4,f1,specificity",
    ];
    let (eval_a, ok_a) = run_stc(&eval_args);
    let (eval_b, ok_b) = run_stc(&eval_args);
    assert!(ok_a && ok_b);
    assert_eq!(eval_a, eval_b, "eval output differs");

    // train-toy twice with a short config and a fixed seed.
    let cfg = dir.path().join("train_small.json");
    std::fs::write(
        &cfg,
        r#"{"iterations": 30, "group_size": 4, "problems_per_iter": 2, "heldout_problems": 40, "heldout_samples": 2, "snapshot_every": 10}"#,
    )
    .unwrap();
    let mut metric_bytes = Vec::new();
    let mut param_bytes = Vec::new();
    let mut summary_bytes = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run_{run}"));
        let (_, ok) = run_stc(&[
            "--seed",
            "7",
            "train-toy",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(ok, "train-toy run {run} failed");
        metric_bytes.push(read_bytes(&out.join("metrics.jsonl")));
        param_bytes.push(read_bytes(&out.join("params.json")));
        summary_bytes.push(read_bytes(&out.join("summary.json")));
        assert!(out.join("snapshot_000010.json").exists());
    }
    assert_eq!(metric_bytes[0], metric_bytes[1], "metrics.jsonl differs");
    assert_eq!(param_bytes[0], param_bytes[1], "params.json differs");
    assert_eq!(summary_bytes[0], summary_bytes[1], "summary.json differs");

    println!(
        "[PASS] criterion 7: determinism — synth-sft, eval, and train-toy outputs byte-identical across repeated seeded runs"
    );
}

// ======================================================================
// Criterion 8: metric definitions
// ======================================================================

#[test]
fn criterion_8_metric_definitions() {
    let m = critique_metrics(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap();
    assert_eq!(
        (m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_),
        (1, 1, 1, 1)
    );
    assert_eq!(m.f1, 0.5);
    assert_eq!(m.specificity, Some(0.5));

    let perfect = critique_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
    assert_eq!(perfect.f1, 1.0);
    assert_eq!(perfect.specificity, Some(1.0));

    let all_positive = critique_metrics(&[1, 1, 1], &[1, 0, 1]).unwrap();
    assert_eq!(all_positive.specificity, Some(0.0));

    let no_negatives = critique_metrics(&[1, 1], &[1, 1]).unwrap();
    assert_eq!(no_negatives.specificity, None);
    assert_eq!(no_negatives.f1, 1.0);

    let never_positive = critique_metrics(&[0, 0], &[1, 1]).unwrap();
    assert_eq!(never_positive.f1, 0.0);

    println!(
        "[PASS] criterion 8: metric definitions — hand confusion case F1=0.5 TNR=0.5 plus degenerate cases exact"
    );
}
