use crate::{Cli, Command, ModeArg, OutputFormat, SelectMethod};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use stc_core::advantage::{total_field, AdvantageWeights, GroupBatch};
use stc_core::eval::{
    best_of_k_critique, critique_metrics, majority_vote, pass_at_n, ProblemSamples, Sample,
};
use stc_core::grpo::{grpo_objective, ClipConfig, PolicyLogprobs};
use stc_core::pipeline::{
    build_corpus, CommandProvider, CritiqueProvider, FileAnnotations, StubProvider,
};
use stc_core::records::{
    read_jsonl, write_jsonl, AdvantageRecord, GoldRecord, GroupRecord, LogprobRecord,
    ParsedRecord, RewardRecord, SampleRecord, TraceRecord,
};
use stc_core::rewards::{RewardBundle, StepScore};
use stc_core::toy::{train, TrainConfig};
use stc_core::trajectory::{parse_trace, TraceMode};
use stc_core::verifier::{answers_equal, canonicalize};

/// Shared numeric configuration for `advantage` and `objective`. Unknown
/// keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EngineConfig {
    lambda_crit: f64,
    lambda_reason: f64,
    lambda_format: f64,
    lambda_dense: f64,
    epsilon: f64,
    beta: f64,
    group_size: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            lambda_crit: 1.0,
            lambda_reason: 1.0,
            lambda_format: 0.05,
            lambda_dense: 0.5,
            epsilon: 0.2,
            beta: 0.001,
            group_size: None,
        }
    }
}

impl EngineConfig {
    fn weights(&self) -> AdvantageWeights<f64> {
        AdvantageWeights {
            lambda_crit: self.lambda_crit,
            lambda_reason: self.lambda_reason,
            lambda_format: self.lambda_format,
            lambda_dense: self.lambda_dense,
        }
    }

    fn clip(&self) -> ClipConfig<f64> {
        ClipConfig {
            epsilon: self.epsilon,
            beta: self.beta,
        }
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_output<T: Serialize>(output: Option<&PathBuf>, records: &[T]) -> Result<()> {
    match output {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_jsonl(file, records)?;
        }
        None => {
            let stdout = std::io::stdout().lock();
            write_jsonl(stdout, records)?;
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Parse { input, output, mode } => cmd_parse(input, output.as_ref(), *mode),
        Command::Verify { pred, gold } => cmd_verify(pred, gold, cli.output_format),
        Command::Reward { input, gold, output } => cmd_reward(input, gold, output.as_ref()),
        Command::Advantage { input, weights, output } => {
            cmd_advantage(input, weights, output.as_ref())
        }
        Command::Objective { batch, logprobs, config } => cmd_objective(batch, logprobs, config),
        Command::TrainToy { config, out } => cmd_train_toy(config.as_ref(), out, cli.seed),
        Command::Eval { input, metrics } => cmd_eval(input, metrics, cli.output_format),
        Command::Select { input, method, k, output } => {
            cmd_select(input, *method, *k, output.as_ref(), cli.output_format)
        }
        Command::SynthSft {
            traces,
            gold,
            out,
            report,
            annotations,
            provider_cmd,
            stub,
        } => cmd_synth_sft(
            traces,
            gold,
            out,
            report,
            annotations.as_ref(),
            provider_cmd.as_deref(),
            *stub,
        ),
    }
}

fn cmd_parse(input: &Path, output: Option<&PathBuf>, mode: ModeArg) -> Result<ExitCode> {
    let records: Vec<TraceRecord> = read_jsonl(input)?;
    let mode = match mode {
        ModeArg::Full => TraceMode::Full,
        ModeArg::Compact => TraceMode::Compact,
    };
    let parsed: Vec<Result<ParsedRecord>> = records
        .par_iter()
        .map(|record| {
            let text = record
                .trace_text()
                .with_context(|| format!("record {}", record.problem_id))?;
            let traj = parse_trace(&text)
                .with_context(|| format!("record {}", record.problem_id))?;
            let mut out = ParsedRecord::from_trajectory(&record.problem_id, &traj);
            out.rendered = Some(traj.render(mode));
            Ok(out)
        })
        .collect();
    let mut ok_records = Vec::with_capacity(parsed.len());
    let mut failed = false;
    for item in parsed {
        match item {
            Ok(r) => ok_records.push(r),
            Err(e) => {
                eprintln!("error: {e:#}");
                failed = true;
            }
        }
    }
    write_output(output, &ok_records)?;
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_verify(pred: &Path, gold: &Path, format: OutputFormat) -> Result<ExitCode> {
    let read_answer = |path: &Path| -> Result<String> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(text.trim_end_matches(['\n', '\r']).to_string())
    };
    let pred_raw = read_answer(pred)?;
    let gold_raw = read_answer(gold)?;
    let pred_canonical = canonicalize(&pred_raw)?;
    let gold_canonical = canonicalize(&gold_raw)?;
    let equal = answers_equal(&pred_canonical, &gold_canonical);
    let report = json!({
        "pred": {
            "raw": pred_raw,
            "canonical": pred_canonical.to_string(),
            "kind": pred_canonical.kind_name(),
        },
        "gold": {
            "raw": gold_raw,
            "canonical": gold_canonical.to_string(),
            "kind": gold_canonical.kind_name(),
        },
        "equal": equal,
    });
    match format {
        OutputFormat::Table => {
            println!(
                "pred {} ({}) vs gold {} ({}): {}",
                pred_canonical,
                pred_canonical.kind_name(),
                gold_canonical,
                gold_canonical.kind_name(),
                if equal { "equal" } else { "not equal" }
            );
        }
        _ => println!("{report}"),
    }
    Ok(if equal { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_reward(input: &Path, gold: &Path, output: Option<&PathBuf>) -> Result<ExitCode> {
    let parsed: Vec<ParsedRecord> = read_jsonl(input)?;
    let gold_records: Vec<GoldRecord> = read_jsonl(gold)?;
    let gold_map: BTreeMap<&str, &str> = gold_records
        .iter()
        .map(|g| (g.problem_id.as_str(), g.gold_answer.as_str()))
        .collect();
    let mut out = Vec::with_capacity(parsed.len());
    let mut failed = false;
    for record in &parsed {
        let result = (|| -> Result<RewardRecord> {
            let gold_raw = gold_map
                .get(record.problem_id.as_str())
                .ok_or_else(|| anyhow!("no gold answer for {}", record.problem_id))?;
            let gold = canonicalize(gold_raw)?;
            let traj = record.to_trajectory()?;
            let bundle = RewardBundle::<f64>::compute(&traj, &gold);
            Ok(RewardRecord {
                problem_id: record.problem_id.clone(),
                r_reason: bundle.r_reason,
                z: bundle.z,
                r_crit: bundle.r_crit,
                r_format: bundle.r_format,
                step_scores: bundle
                    .step_scores
                    .iter()
                    .map(|s| match s {
                        StepScore::Score(v) => Some(*v),
                        StepScore::Absent => None,
                    })
                    .collect(),
            })
        })();
        match result {
            Ok(r) => out.push(r),
            Err(e) => {
                eprintln!("error: {e:#}");
                failed = true;
            }
        }
    }
    write_output(output, &out)?;
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn group_from_record(record: &GroupRecord) -> Result<GroupBatch<f64>> {
    let gold = canonicalize(&record.gold_answer)
        .with_context(|| format!("gold answer for {}", record.problem_id))?;
    let trajectories = record
        .trajectories
        .iter()
        .enumerate()
        .map(|(k, entry)| {
            let text = entry
                .trace_text()
                .with_context(|| format!("{} trajectory {k}", record.problem_id))?;
            parse_trace(&text).with_context(|| format!("{} trajectory {k}", record.problem_id))
        })
        .collect::<Result<Vec<_>>>()?;
    GroupBatch::from_trajectories(record.problem_id.clone(), trajectories, &gold)
        .with_context(|| format!("group {}", record.problem_id))
}

fn cmd_advantage(input: &Path, weights: &Path, output: Option<&PathBuf>) -> Result<ExitCode> {
    let groups: Vec<GroupRecord> = read_jsonl(input)?;
    let config: EngineConfig = load_json(weights)?;
    let w = config.weights();
    let records: Vec<Result<AdvantageRecord>> = groups
        .par_iter()
        .map(|record| {
            if let Some(expected) = config.group_size {
                if record.trajectories.len() != expected {
                    bail!(
                        "group {} has {} trajectories, config group_size is {expected}",
                        record.problem_id,
                        record.trajectories.len()
                    );
                }
            }
            let batch = group_from_record(record)?;
            let field = total_field(&batch, &w)?;
            Ok(AdvantageRecord {
                problem_id: record.problem_id.clone(),
                token_counts: batch.token_counts(),
                critique: field.critique,
                reasoning: field.reasoning,
                format: field.format,
                dense: field.dense,
                combined: field.combined,
                total: field.total,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(records.len());
    let mut failed = false;
    for item in records {
        match item {
            Ok(r) => out.push(r),
            Err(e) => {
                eprintln!("error: {e:#}");
                failed = true;
            }
        }
    }
    write_output(output, &out)?;
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_objective(batch: &Path, logprobs: &Path, config: &Path) -> Result<ExitCode> {
    let groups: Vec<GroupRecord> = read_jsonl(batch)?;
    let lp_records: Vec<LogprobRecord> = read_jsonl(logprobs)?;
    let config: EngineConfig = load_json(config)?;
    let lp_map: BTreeMap<&str, &LogprobRecord> = lp_records
        .iter()
        .map(|r| (r.problem_id.as_str(), r))
        .collect();
    let mut outputs = Vec::new();
    let mut objective_sum = 0.0;
    for record in &groups {
        let batch = group_from_record(record)?;
        let field = total_field(&batch, &config.weights())?;
        let lp_record = lp_map
            .get(record.problem_id.as_str())
            .ok_or_else(|| anyhow!("no logprobs for {}", record.problem_id))?;
        let lps = lp_record
            .trajectories
            .iter()
            .map(|entry| {
                PolicyLogprobs::new(
                    entry.current.clone(),
                    entry.behavior.clone(),
                    entry.reference.clone(),
                )
                .map_err(anyhow::Error::from)
            })
            .collect::<Result<Vec<_>>>()?;
        let eval = grpo_objective(&batch, &field, &lps, &config.clip())?;
        objective_sum += eval.objective;
        outputs.push(json!({
            "problem_id": record.problem_id,
            "objective": eval.objective,
            "grad_logp_current": eval.grad_logp_current,
        }));
    }
    let mean = if groups.is_empty() {
        0.0
    } else {
        objective_sum / groups.len() as f64
    };
    println!(
        "{}",
        json!({ "groups": outputs, "mean_objective": mean })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_toy(config: Option<&PathBuf>, out: &Path, seed: Option<u64>) -> Result<ExitCode> {
    let mut cfg: TrainConfig = match config {
        Some(path) => load_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcome = train(&cfg)?;

    let metrics_path = out.join("metrics.jsonl");
    let file = std::fs::File::create(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))?;
    write_jsonl(file, &outcome.history)?;

    for (iteration, snapshot) in &outcome.snapshots {
        let path = out.join(format!("snapshot_{iteration:06}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(snapshot)? + "\n")?;
    }
    let params_path = out.join("params.json");
    std::fs::write(
        &params_path,
        serde_json::to_string_pretty(&outcome.policy.snapshot())? + "\n",
    )?;

    let summary = json!({
        "config": serde_json::to_value(&cfg)?,
        "heldout": serde_json::to_value(&outcome.heldout)?,
        "final_iteration": outcome.history.last().map(|m| m.iteration),
    });
    let summary_path = out.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

/// Groups sample records by problem id, preserving first-appearance order.
fn collect_problems(records: &[SampleRecord]) -> Result<Vec<ProblemSamples>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, ProblemSamples> = BTreeMap::new();
    for record in records {
        let answer = match &record.answer {
            Some(text) => canonicalize(text).ok(),
            None => None,
        };
        let sample = Sample {
            answer,
            final_score: record.final_score,
            step_scores: record.step_scores.clone(),
            gold_step_labels: record.gold_step_labels.clone(),
        };
        if let Some(existing) = by_id.get_mut(&record.problem_id) {
            existing.samples.push(sample);
        } else {
            let gold = canonicalize(&record.gold_answer)
                .with_context(|| format!("gold answer for {}", record.problem_id))?;
            order.push(record.problem_id.clone());
            by_id.insert(
                record.problem_id.clone(),
                ProblemSamples {
                    problem_id: record.problem_id.clone(),
                    gold,
                    samples: vec![sample],
                },
            );
        }
    }
    Ok(order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("collected"))
        .collect())
}

fn cmd_eval(input: &Path, metrics: &str, format: OutputFormat) -> Result<ExitCode> {
    let records: Vec<SampleRecord> = read_jsonl(input)?;
    let problems = collect_problems(&records)?;
    if problems.is_empty() {
        bail!("no samples in {}", input.display());
    }

    // Answer-level critique data: prediction = final critique score (absent
    // counts as 0), label = verifier correctness.
    let mut answer_preds = Vec::new();
    let mut answer_labels = Vec::new();
    for p in &problems {
        for s in &p.samples {
            answer_preds.push(s.final_score.unwrap_or(0));
            let correct = s
                .answer
                .as_ref()
                .is_some_and(|a| answers_equal(a, &p.gold));
            answer_labels.push(u8::from(correct));
        }
    }
    // Process-level data when gold step labels are supplied.
    let mut process_preds = Vec::new();
    let mut process_labels = Vec::new();
    for p in &problems {
        for s in &p.samples {
            if let (Some(preds), Some(labels)) = (&s.step_scores, &s.gold_step_labels) {
                if preds.len() == labels.len() {
                    process_preds.extend_from_slice(preds);
                    process_labels.extend_from_slice(labels);
                }
            }
        }
    }

    let mut out = serde_json::Map::new();
    for metric in metrics.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if let Some(n) = metric.strip_prefix("pass@") {
            let n: usize = n.parse().with_context(|| format!("bad metric {metric}"))?;
            let value = pass_at_n(&problems, n)?;
            out.insert(metric.to_string(), json!(value));
        } else if metric == "f1" || metric == "specificity" {
            let answer = critique_metrics(&answer_preds, &answer_labels)?;
            if metric == "f1" {
                out.insert("answer_f1".into(), json!(answer.f1));
            } else {
                out.insert("answer_specificity".into(), json!(answer.specificity));
            }
            if !process_preds.is_empty() {
                let process = critique_metrics(&process_preds, &process_labels)?;
                if metric == "f1" {
                    out.insert("process_f1".into(), json!(process.f1));
                } else {
                    out.insert("process_specificity".into(), json!(process.specificity));
                }
            }
        } else {
            bail!("unknown metric {metric:?}");
        }
    }

    match format {
        OutputFormat::Table => {
            for (key, value) in &out {
                println!("{key:<22} {value}");
            }
        }
        _ => println!("{}", serde_json::Value::Object(out)),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_select(
    input: &Path,
    method: SelectMethod,
    k: Option<usize>,
    output: Option<&PathBuf>,
    format: OutputFormat,
) -> Result<ExitCode> {
    let records: Vec<SampleRecord> = read_jsonl(input)?;
    let problems = collect_problems(&records)?;
    let mut out = Vec::with_capacity(problems.len());
    let mut correct = 0usize;
    let mut failed = false;
    for p in &problems {
        let budget = k.unwrap_or(p.samples.len()).min(p.samples.len());
        let subset = &p.samples[..budget];
        let selected = match method {
            SelectMethod::Majority => majority_vote(subset),
            SelectMethod::Critique => best_of_k_critique(subset),
        };
        match selected {
            Ok(answer) => {
                let is_correct = answers_equal(&answer, &p.gold);
                correct += usize::from(is_correct);
                out.push(json!({
                    "problem_id": p.problem_id,
                    "selected": answer.to_string(),
                    "correct": is_correct,
                }));
            }
            Err(e) => {
                failed = true;
                out.push(json!({
                    "problem_id": p.problem_id,
                    "error": e.to_string(),
                }));
            }
        }
    }
    write_output(output, &out)?;
    let accuracy = correct as f64 / problems.len().max(1) as f64;
    match format {
        OutputFormat::Table => eprintln!("selection accuracy {accuracy:.4}"),
        _ => eprintln!("{}", json!({ "selection_accuracy": accuracy })),
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_synth_sft(
    traces: &Path,
    gold: &Path,
    out: &Path,
    report: &Path,
    annotations: Option<&PathBuf>,
    provider_cmd: Option<&str>,
    stub: bool,
) -> Result<ExitCode> {
    let provider: Box<dyn CritiqueProvider> = if let Some(path) = annotations {
        Box::new(FileAnnotations::load(path)?)
    } else if let Some(cmd) = provider_cmd {
        Box::new(CommandProvider {
            command: cmd.to_string(),
        })
    } else if stub {
        let gold_records: Vec<GoldRecord> = read_jsonl(gold)?;
        Box::new(StubProvider::from_gold_records(&gold_records))
    } else {
        bail!("one of --annotations, --provider-cmd, or --stub is required");
    };
    let summary = build_corpus(traces, provider.as_ref(), gold, out, report)?;
    println!(
        "{}",
        json!({
            "input_records": summary.input_records,
            "kept": summary.kept,
            "discarded": summary.discarded,
            "discarded_by_reason": summary.discarded_by_reason,
        })
    );
    Ok(ExitCode::SUCCESS)
}
