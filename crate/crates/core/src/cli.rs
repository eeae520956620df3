//! Command implementations behind the `promptcal` binary.
//!
//! Commands: `init-example` (offline demo scaffold), `compile` (split,
//! baseline eval, optimize, save bundle), `evaluate` (held-out metrics for a
//! saved artifact), `ablate` (seed x budget grid with aggregate and delta
//! tables), `sensitivity` (post-hoc utility under alternative fp scores),
//! `roundtrip` (save/reload prediction equivalence plus bundle digests), and
//! `inspect` (human-readable artifact dump with a provenance checklist).
//!
//! Every command is idempotent given deterministic backends: reruns rewrite
//! the same bytes. Failures carry the failing module and operation in their
//! context chain.

use std::path::{Path, PathBuf};

use anyhow::{Context, bail};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::artifact::{
    CompiledProgram, EnvironmentRecord, LogRefs, ModelInfo, ProvenanceRecord, Recorded, Seeds,
    SplitIds, load_artifact, roundtrip_check, save_artifact, verify_bundle,
    verify_provenance_fields, write_bundle_manifest,
};
use crate::backend::{GenerationSettings, Role, RunLog};
use crate::config::{BackendKindChoice, ConfigError, RunConfig};
use crate::contract::TaskContract;
use crate::dataset::{
    DatasetSplits, Record, dataset_fingerprint, load_records, stratified_split, write_records,
};
use crate::evaluation::{
    ConfusionMatrix, EvalOutcome, METRIC_NAMES, RunMetrics, aggregate_runs,
    compute_metrics_with_invalid, evaluate_program, fmt3, paired_deltas, sensitivity_table,
};
use crate::optimizer::{CompileOutcome, compile};

/// Calibrate prompt harnesses against labelled screening examples and an
/// executable asymmetric metric, with inspectable artifacts.
#[derive(Debug, Parser)]
#[command(name = "promptcal", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

impl SplitChoice {
    fn name(&self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Val => "val",
            SplitChoice::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Mock,
    Http,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scaffold the 12-record demonstration dataset, screening contract,
    /// mock scripts, and a runnable config.
    InitExample {
        #[arg(long, default_value = "example")]
        out: PathBuf,
    },
    /// Split the dataset, evaluate the baseline, optimize the harness under
    /// the configured budget, and save the artifact bundle.
    Compile {
        #[arg(long)]
        config: PathBuf,
        /// Override both the split seed and the optimizer seed.
        #[arg(long)]
        seed: Option<i64>,
        /// Override max_full_evals.
        #[arg(long)]
        budget: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override both backends' kind.
        #[arg(long)]
        backend: Option<BackendChoice>,
        /// Override the student mock script path.
        #[arg(long)]
        mock_script: Option<PathBuf>,
    },
    /// Evaluate a saved artifact on one split and emit metrics plus a
    /// prediction log.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        #[arg(long)]
        seed: Option<i64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full seed x budget grid: per-seed baselines, per-cell
    /// compilations, aggregate tables, and paired deltas.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<i64>,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute label-level utility from archived confusion matrices under
    /// alternative false-positive scores (post-hoc).
    Sensitivity {
        /// JSON Lines of {condition, seed, tp, fp, tn, fn}.
        #[arg(long)]
        matrices: PathBuf,
        #[arg(long = "fp-scores", value_delimiter = ',', default_values_t = [0.2, 0.4, 0.6])]
        fp_scores: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Save/reload an artifact and verify the reloaded program produces the
    /// same predictions; verifies bundle digests when a manifest is present.
    Roundtrip {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
    },
    /// Print the fixed layers, harness, provenance checklist, and the
    /// harness diff against the recorded baseline.
    Inspect {
        #[arg(long)]
        artifact: PathBuf,
        /// Provenance file; defaults to provenance.json next to the artifact.
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::InitExample { out } => {
            let files = cmd_init_example(&out)?;
            for file in files {
                println!("wrote {}", file.display());
            }
            println!(
                "run: promptcal compile --config {}",
                out.join("config.json").display()
            );
            Ok(())
        }
        Command::Compile { config, seed, budget, out, backend, mock_script } => {
            let summary = cmd_compile(
                &config,
                &CompileOverrides { seed, budget, out, backend, mock_script },
            )?;
            println!(
                "budget_used={} baseline_mean_val={} compiled_mean_val={} bundle={}",
                summary.budget_used,
                fmt3(Some(summary.baseline_mean_val)),
                fmt3(Some(summary.compiled_mean_val)),
                summary.bundle_dir.display(),
            );
            Ok(())
        }
        Command::Evaluate { config, artifact, split, seed, out } => {
            let report = cmd_evaluate(&config, &artifact, split, seed, out.as_deref())?;
            println!(
                "condition={} split={} n={} accuracy={} recall={} utility={} invalid={}",
                report.condition,
                report.split,
                report.metrics.n,
                fmt3(report.metrics.accuracy),
                fmt3(report.metrics.recall),
                fmt3(report.metrics.utility),
                report.invalid_count,
            );
            Ok(())
        }
        Command::Ablate { config, seeds, budgets, out } => {
            let summary = cmd_ablate(&config, &seeds, &budgets, out.as_deref())?;
            println!(
                "cells_completed={} cells_reused={} failures={} out={}",
                summary.cells_completed,
                summary.cells_reused,
                summary.failures,
                summary.out.display(),
            );
            if summary.failures > 0 {
                bail!("ablation grid completed with {} failed cell(s)", summary.failures);
            }
            Ok(())
        }
        Command::Sensitivity { matrices, fp_scores, out } => {
            let table = cmd_sensitivity(&matrices, &fp_scores, &out)?;
            println!(
                "sensitivity table ({}) over {} condition(s) written to {}",
                table.label,
                table.rows.len(),
                out.display(),
            );
            Ok(())
        }
        Command::Roundtrip { config, artifact, split } => {
            let report = cmd_roundtrip(&config, &artifact, split)?;
            println!(
                "roundtrip equivalent={} records={} first_divergence={:?}",
                report.equivalent, report.records, report.first_divergence,
            );
            if !report.equivalent {
                bail!("reloaded program diverged from the saved program");
            }
            Ok(())
        }
        Command::Inspect { artifact, provenance } => {
            let dump = cmd_inspect(&artifact, provenance.as_deref())?;
            println!("{dump}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// compile
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
pub struct CompileOverrides {
    pub seed: Option<i64>,
    pub budget: Option<u32>,
    pub out: Option<PathBuf>,
    pub backend: Option<BackendChoice>,
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CompileSummary {
    pub budget_used: u32,
    pub baseline_mean_val: f64,
    pub compiled_mean_val: f64,
    pub bundle_dir: PathBuf,
    pub compiled_artifact: PathBuf,
    pub compiled_digest: String,
}

fn load_config(path: &Path, overrides: &CompileOverrides) -> Result<RunConfig, ConfigError> {
    crate::config::load_for_cli(path, |config| {
        if let Some(seed) = overrides.seed {
            config.split.seed = seed;
            config.optimizer.seed = seed;
        }
        if let Some(budget) = overrides.budget {
            config.optimizer.max_full_evals = budget;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        if let Some(kind) = overrides.backend {
            let kind = match kind {
                BackendChoice::Mock => BackendKindChoice::Mock,
                BackendChoice::Http => BackendKindChoice::Http,
            };
            config.student.kind = kind;
            config.reflection.kind = kind;
        }
        if let Some(script) = &overrides.mock_script {
            config.student.script = Some(script.clone());
        }
    })
}

fn load_contract_and_records(config: &RunConfig) -> anyhow::Result<(TaskContract, Vec<Record>)> {
    let text = std::fs::read_to_string(&config.contract)
        .with_context(|| format!("task_contract: cannot read {}", config.contract.display()))?;
    let contract = TaskContract::from_json_str(&text)
        .context("task_contract.new_contract: contract file rejected")?;
    let records = load_records(&config.dataset, contract.decision_tokens())
        .context("dataset.load_records: record file rejected")?;
    Ok((contract, records))
}

pub fn cmd_compile(
    config_path: &Path,
    overrides: &CompileOverrides,
) -> anyhow::Result<CompileSummary> {
    let config = load_config(config_path, overrides).context("cli: config validation failed")?;
    let (contract, records) = load_contract_and_records(&config)?;
    let splits = stratified_split(&records, config.split.sizes, config.split.seed)
        .context("dataset.stratified_split failed")?;

    let (student_backend, student_settings) = config
        .student
        .build(Role::Student)
        .context("cli: student backend construction failed")?;
    let (reflection_backend, reflection_settings) = config
        .reflection
        .build(Role::Reflection)
        .context("cli: reflection backend construction failed")?;

    let log = RunLog::new();
    let outcome = compile(
        &contract,
        &splits.train,
        &splits.val,
        config.metric,
        &config.policy,
        &crate::optimizer::RoleBackend {
            backend: student_backend.as_ref(),
            settings: student_settings.clone(),
        },
        &crate::optimizer::RoleBackend {
            backend: reflection_backend.as_ref(),
            settings: reflection_settings.clone(),
        },
        &config.optimizer,
        &log,
    );
    let outcome = match outcome {
        Ok(outcome) => outcome,
        Err(crate::optimizer::OptimizeError::Aborted { source, partial_trace }) => {
            // Preserve the partial trace for inspection before failing.
            let _ = std::fs::create_dir_all(&config.out);
            let _ = std::fs::write(config.out.join("trace.partial.jsonl"), partial_trace.to_jsonl());
            return Err(anyhow::Error::new(source)).context("optimizer.compile aborted");
        }
        Err(error) => return Err(error).context("optimizer.compile rejected the configuration"),
    };

    let bundle = write_compile_bundle(
        &config,
        &contract,
        &records,
        &splits,
        &outcome,
        &student_settings,
        &reflection_settings,
        &log,
    )?;
    Ok(CompileSummary {
        budget_used: outcome.trace.budget_used,
        baseline_mean_val: outcome.baseline().mean_val_score,
        compiled_mean_val: outcome.winner().mean_val_score,
        bundle_dir: config.out.clone(),
        compiled_artifact: bundle.0,
        compiled_digest: bundle.1,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_compile_bundle(
    config: &RunConfig,
    contract: &TaskContract,
    records: &[Record],
    splits: &DatasetSplits,
    outcome: &CompileOutcome,
    student_settings: &GenerationSettings,
    reflection_settings: &GenerationSettings,
    log: &RunLog,
) -> anyhow::Result<(PathBuf, String)> {
    let out = &config.out;
    std::fs::create_dir_all(out.join("predictions"))
        .with_context(|| format!("cli: cannot create {}", out.display()))?;
    let mut members: Vec<String> = Vec::new();

    let stem = format!(
        "{}.{}.{}",
        contract.contract_id(), config.optimizer.seed, config.optimizer.max_full_evals
    );
    let compiled_name = format!("{stem}.compiled.json");
    let compiled_path = out.join(&compiled_name);
    let digest = save_artifact(&outcome.program, &compiled_path)
        .context("artifact.save_artifact: compiled program")?;
    members.push(compiled_name);

    let baseline_name = format!("{stem}.baseline.json");
    let baseline_program = CompiledProgram::new(contract.clone(), student_settings.clone());
    save_artifact(&baseline_program, &out.join(&baseline_name))
        .context("artifact.save_artifact: baseline program")?;
    members.push(baseline_name);

    write_text(&out.join("trace.jsonl"), &outcome.trace.to_jsonl())?;
    members.push("trace.jsonl".to_string());

    let exchange_lines: Vec<String> = log
        .snapshot()
        .iter()
        .map(|entry| serde_json::to_string(entry).expect("log entry serializes"))
        .collect();
    write_text(&out.join("exchanges.jsonl"), &joined_lines(&exchange_lines))?;
    members.push("exchanges.jsonl".to_string());

    write_json(&out.join("split_manifest.json"), &splits.manifest())?;
    members.push("split_manifest.json".to_string());

    let mut prediction_paths = Vec::new();
    for (label, candidate_id) in [("baseline", 0), ("compiled", outcome.winner_id)] {
        let rel = format!("predictions/{label}_val.jsonl");
        let rows = &outcome.val_predictions[&candidate_id];
        let lines: Vec<String> = rows
            .iter()
            .map(|row| serde_json::to_string(row).expect("row serializes"))
            .collect();
        write_text(&out.join(&rel), &joined_lines(&lines))?;
        prediction_paths.push(rel.clone());
        members.push(rel);
    }

    let provenance = ProvenanceRecord {
        dataset_fingerprint: dataset_fingerprint(records),
        split_fingerprint: splits.split_fingerprint.clone(),
        split_ids: SplitIds {
            train: splits.train.iter().map(|r| r.record_id.clone()).collect(),
            val: splits.val.iter().map(|r| r.record_id.clone()).collect(),
            test: splits.test.iter().map(|r| r.record_id.clone()).collect(),
        },
        metric: config.metric.name().to_string(),
        policy: config.policy.clone(),
        optimizer: config.optimizer.clone(),
        student_model: ModelInfo {
            model_id: student_settings.model_id.clone(),
            temperature: student_settings.temperature,
        },
        reflection_model: ModelInfo {
            model_id: reflection_settings.model_id.clone(),
            temperature: reflection_settings.temperature,
        },
        seeds: Seeds {
            split_seed: config.split.seed,
            optimizer_seed: config.optimizer.seed,
        },
        environment: EnvironmentRecord::current(Some(
            config
                .execution_date
                .clone()
                .unwrap_or_else(|| chrono::Utc::now().format("%Y-%m-%d").to_string()),
        )),
        budget_used: outcome.trace.budget_used,
        baseline_harness: contract.harness_text().to_string(),
        token_usage: Recorded::from_option(log.token_tally()),
        provider_cost: Recorded::Unavailable,
        logs: LogRefs {
            trace: "trace.jsonl".to_string(),
            exchanges: "exchanges.jsonl".to_string(),
            predictions: prediction_paths,
        },
    };
    write_json(&out.join("provenance.json"), &provenance)?;
    members.push("provenance.json".to_string());

    write_bundle_manifest(out, &members).context("artifact: bundle manifest")?;
    Ok((compiled_path, digest))
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Per-run report: counts, statistics, and the policy note every emitted
/// report carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub condition: String,
    pub seed: i64,
    pub split: String,
    pub confusion: ConfusionMatrix,
    pub invalid_count: u64,
    pub invalid_gold_negative: u64,
    pub metrics: RunMetrics,
    pub fp_score_note: String,
}

fn fp_score_note(policy: &crate::metric::ScoringPolicy) -> String {
    format!(
        "fp_score={} is a policy choice of this run, not a universal screening constant",
        policy.false_positive_score
    )
}

fn evaluate_to_report(
    outcome: &EvalOutcome,
    policy: &crate::metric::ScoringPolicy,
    condition: &str,
    seed: i64,
    split: &str,
) -> anyhow::Result<EvaluateReport> {
    let metrics =
        compute_metrics_with_invalid(&outcome.confusion, outcome.invalid_gold_negative, policy)
            .context("evaluation.compute_metrics failed")?
            .tagged(condition, seed);
    Ok(EvaluateReport {
        condition: condition.to_string(),
        seed,
        split: split.to_string(),
        confusion: outcome.confusion,
        invalid_count: outcome.invalid_count,
        invalid_gold_negative: outcome.invalid_gold_negative,
        metrics,
        fp_score_note: fp_score_note(policy),
    })
}

pub fn cmd_evaluate(
    config_path: &Path,
    artifact_path: &Path,
    split: SplitChoice,
    seed: Option<i64>,
    out_override: Option<&Path>,
) -> anyhow::Result<EvaluateReport> {
    let config = load_config(
        config_path,
        &CompileOverrides { seed, ..Default::default() },
    )
    .context("cli: config validation failed")?;
    let program = load_artifact(artifact_path).context("artifact.load_artifact failed")?;
    let (contract, records) = load_contract_and_records(&config)?;
    if program.contract.decision_tokens() != contract.decision_tokens() {
        bail!("artifact decision tokens do not match the configured contract");
    }
    let splits = stratified_split(&records, config.split.sizes, config.split.seed)
        .context("dataset.stratified_split failed")?;
    let selected = splits
        .by_name(split.name())
        .expect("split choice is one of train/val/test");
    if selected.is_empty() {
        return Err(anyhow::Error::new(crate::evaluation::EvalError::EmptyRecords))
            .with_context(|| format!("evaluation.evaluate_program: split '{}' is empty", split.name()));
    }

    let (backend, _) = config
        .student
        .build(Role::Student)
        .context("cli: student backend construction failed")?;
    let log = RunLog::new();
    let outcome = evaluate_program(
        &program.contract,
        &program.student_settings,
        backend.as_ref(),
        selected,
        &config.policy,
        config.metric,
        config.optimizer.num_threads,
        &log,
    )
    .context("evaluation.evaluate_program failed")?;

    let condition = artifact_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "artifact".to_string());
    let report = evaluate_to_report(&outcome, &config.policy, &condition, config.split.seed, split.name())?;

    let out = out_override.unwrap_or(&config.out);
    std::fs::create_dir_all(out).with_context(|| format!("cli: cannot create {}", out.display()))?;
    write_json(&out.join(format!("{condition}.{}.metrics.json", split.name())), &report)?;
    let lines: Vec<String> = outcome
        .rows
        .iter()
        .map(|row| serde_json::to_string(row).expect("row serializes"))
        .collect();
    write_text(
        &out.join(format!("{condition}.{}.predictions.jsonl", split.name())),
        &joined_lines(&lines),
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct AblateSummary {
    pub cells_completed: usize,
    pub cells_reused: usize,
    pub failures: usize,
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct FailureEntry {
    condition: String,
    seed: i64,
    error: String,
}

fn condition_label(budget: u32) -> String {
    format!("max_eval={budget}")
}

fn condition_slug(condition: &str) -> String {
    condition.replace('=', "_")
}

pub fn cmd_ablate(
    config_path: &Path,
    seeds: &[i64],
    budgets: &[u32],
    out_override: Option<&Path>,
) -> anyhow::Result<AblateSummary> {
    if seeds.is_empty() || budgets.is_empty() {
        bail!("cli: ablate requires at least one seed and one budget");
    }
    let base_config = load_config(
        config_path,
        &CompileOverrides {
            out: out_override.map(Path::to_path_buf),
            ..Default::default()
        },
    )
    .context("cli: config validation failed")?;
    let out = base_config.out.clone();
    std::fs::create_dir_all(out.join("cells")).context("cli: cannot create cells dir")?;
    std::fs::create_dir_all(out.join("predictions")).context("cli: cannot create predictions dir")?;

    let (contract, records) = load_contract_and_records(&base_config)?;
    let mut failures: Vec<FailureEntry> = Vec::new();
    let mut completed = 0usize;
    let mut reused = 0usize;

    for &seed in seeds {
        // Baseline cell, once per seed.
        let baseline_cell = out.join(format!("cells/baseline.seed{seed}.json"));
        if baseline_cell.exists() {
            reused += 1;
        } else {
            match run_baseline_cell(&base_config, &contract, &records, seed, &out) {
                Ok(()) => completed += 1,
                Err(error) => failures.push(FailureEntry {
                    condition: "baseline".to_string(),
                    seed,
                    error: format!("{error:#}"),
                }),
            }
        }
        for &budget in budgets {
            let condition = condition_label(budget);
            let cell = out.join(format!("cells/{}.seed{seed}.json", condition_slug(&condition)));
            if cell.exists() {
                reused += 1;
                continue;
            }
            match run_condition_cell(config_path, &base_config, seed, budget, &out) {
                Ok(()) => completed += 1,
                Err(error) => failures.push(FailureEntry {
                    condition,
                    seed,
                    error: format!("{error:#}"),
                }),
            }
        }
    }

    // Tables from whatever cells exist, budgets in request order.
    let read_cells = |condition: &str| -> Vec<EvaluateReport> {
        seeds
            .iter()
            .filter_map(|seed| {
                let path = out.join(format!("cells/{}.seed{seed}.json", condition_slug(condition)));
                let text = std::fs::read_to_string(path).ok()?;
                serde_json::from_str(&text).ok()
            })
            .collect()
    };
    let baseline_cells = read_cells("baseline");
    let baseline_runs: Vec<RunMetrics> = baseline_cells.iter().map(|c| c.metrics.clone()).collect();

    let mut aggregate_rows = Vec::new();
    let mut delta_rows = Vec::new();
    let mut matrix_lines: Vec<String> = Vec::new();
    for cell in &baseline_cells {
        matrix_lines.push(matrix_line(cell));
    }
    for &budget in budgets {
        let condition = condition_label(budget);
        let cells = read_cells(&condition);
        for cell in &cells {
            matrix_lines.push(matrix_line(cell));
        }
        let runs: Vec<RunMetrics> = cells.iter().map(|c| c.metrics.clone()).collect();
        if let Ok(aggregate) = aggregate_runs(&runs) {
            aggregate_rows.push(aggregate);
        }
        if !runs.is_empty()
            && !baseline_runs.is_empty()
            && let Ok(delta) = paired_deltas(&runs, &baseline_runs)
        {
            delta_rows.push(delta);
        }
    }
    let baseline_aggregate = aggregate_runs(&baseline_runs).ok();

    write_aggregate_tables(&out, baseline_aggregate.as_ref(), &aggregate_rows)?;
    write_delta_tables(&out, &delta_rows)?;
    write_text(&out.join("matrices.jsonl"), &joined_lines(&matrix_lines))?;

    let failures_path = out.join("failures.json");
    if failures.is_empty() {
        let _ = std::fs::remove_file(&failures_path);
    } else {
        write_json(&failures_path, &failures)?;
    }
    Ok(AblateSummary {
        cells_completed: completed,
        cells_reused: reused,
        failures: failures.len(),
        out,
    })
}

fn matrix_line(cell: &EvaluateReport) -> String {
    serde_json::to_string(&serde_json::json!({
        "condition": cell.condition,
        "seed": cell.seed,
        "tp": cell.confusion.true_positives,
        "fp": cell.confusion.false_positives,
        "tn": cell.confusion.true_negatives,
        "fn": cell.confusion.false_negatives,
    }))
    .expect("matrix line serializes")
}

fn run_baseline_cell(
    config: &RunConfig,
    contract: &TaskContract,
    records: &[Record],
    seed: i64,
    out: &Path,
) -> anyhow::Result<()> {
    let splits = stratified_split(records, config.split.sizes, seed)
        .context("dataset.stratified_split failed")?;
    if splits.test.is_empty() {
        bail!("evaluation: test split is empty");
    }
    let (backend, settings) = config
        .student
        .build(Role::Student)
        .context("cli: student backend construction failed")?;
    let outcome = evaluate_program(
        contract,
        &settings,
        backend.as_ref(),
        &splits.test,
        &config.policy,
        config.metric,
        config.optimizer.num_threads,
        &RunLog::new(),
    )
    .context("evaluation.evaluate_program failed")?;
    let report = evaluate_to_report(&outcome, &config.policy, "baseline", seed, "test")?;
    write_json(&out.join(format!("cells/baseline.seed{seed}.json")), &report)?;
    let lines: Vec<String> = outcome
        .rows
        .iter()
        .map(|row| serde_json::to_string(row).expect("row serializes"))
        .collect();
    write_text(
        &out.join(format!("predictions/baseline.seed{seed}.jsonl")),
        &joined_lines(&lines),
    )?;
    Ok(())
}

fn run_condition_cell(
    config_path: &Path,
    base_config: &RunConfig,
    seed: i64,
    budget: u32,
    out: &Path,
) -> anyhow::Result<()> {
    let condition = condition_label(budget);
    let bundle_dir = out.join(format!("bundles/seed{seed}_budget{budget}"));
    let summary = cmd_compile(
        config_path,
        &CompileOverrides {
            seed: Some(seed),
            budget: Some(budget),
            out: Some(bundle_dir),
            ..Default::default()
        },
    )?;

    // Fresh backend for the held-out evaluation so the cell does not depend
    // on how many calls compilation consumed.
    let program = load_artifact(&summary.compiled_artifact).context("artifact.load_artifact failed")?;
    let (_, records) = load_contract_and_records(base_config)?;
    let splits = stratified_split(&records, base_config.split.sizes, seed)
        .context("dataset.stratified_split failed")?;
    if splits.test.is_empty() {
        bail!("evaluation: test split is empty");
    }
    let (backend, _) = base_config
        .student
        .build(Role::Student)
        .context("cli: student backend construction failed")?;
    let outcome = evaluate_program(
        &program.contract,
        &program.student_settings,
        backend.as_ref(),
        &splits.test,
        &base_config.policy,
        base_config.metric,
        base_config.optimizer.num_threads,
        &RunLog::new(),
    )
    .context("evaluation.evaluate_program failed")?;
    let report = evaluate_to_report(&outcome, &base_config.policy, &condition, seed, "test")?;
    write_json(
        &out.join(format!("cells/{}.seed{seed}.json", condition_slug(&condition))),
        &report,
    )?;
    let lines: Vec<String> = outcome
        .rows
        .iter()
        .map(|row| serde_json::to_string(row).expect("row serializes"))
        .collect();
    write_text(
        &out.join(format!("predictions/{}.seed{seed}.jsonl", condition_slug(&condition))),
        &joined_lines(&lines),
    )?;
    Ok(())
}

fn aggregate_csv_header() -> String {
    let mut header = String::from("condition,runs");
    for name in METRIC_NAMES {
        header.push_str(&format!(",{name}_mean,{name}_sd"));
    }
    header
}

fn aggregate_csv_row(aggregate: &crate::evaluation::AggregateStats) -> String {
    let mut row = format!("{},{}", aggregate.condition, aggregate.run_count);
    for name in METRIC_NAMES {
        let cell = &aggregate.metrics[name];
        row.push_str(&format!(
            ",{},{}",
            cell.mean.map(|v| fmt3(Some(v))).unwrap_or_default(),
            cell.sample_sd.map(|v| fmt3(Some(v))).unwrap_or_default(),
        ));
    }
    row
}

fn write_aggregate_tables(
    out: &Path,
    baseline: Option<&crate::evaluation::AggregateStats>,
    rows: &[crate::evaluation::AggregateStats],
) -> anyhow::Result<()> {
    let mut csv = vec![aggregate_csv_header()];
    csv.extend(rows.iter().map(aggregate_csv_row));
    write_text(&out.join("aggregates.csv"), &joined_lines(&csv))?;

    if let Some(baseline) = baseline {
        let lines = vec![aggregate_csv_header(), aggregate_csv_row(baseline)];
        write_text(&out.join("baseline_aggregate.csv"), &joined_lines(&lines))?;
    }

    let mut text = String::from("Held-out metrics, mean +/- sample SD across seeds\n");
    text.push_str("(positive class: include)\n\n");
    let mut print_row = |aggregate: &crate::evaluation::AggregateStats| {
        text.push_str(&format!("{} (runs={})\n", aggregate.condition, aggregate.run_count));
        for name in METRIC_NAMES {
            let cell = &aggregate.metrics[name];
            let sd = cell
                .sample_sd
                .map(|v| format!(" +/- {}", fmt3(Some(v))))
                .unwrap_or_default();
            text.push_str(&format!(
                "  {name:<13} {}{sd}\n",
                cell.mean.map(|v| fmt3(Some(v))).unwrap_or_else(|| "n/a".to_string()),
            ));
        }
        text.push('\n');
    };
    if let Some(baseline) = baseline {
        print_row(baseline);
    }
    for aggregate in rows {
        print_row(aggregate);
    }
    write_text(&out.join("aggregates.txt"), &text)?;
    Ok(())
}

fn write_delta_tables(out: &Path, deltas: &[crate::evaluation::PairedDelta]) -> anyhow::Result<()> {
    let mut header = String::from("condition,baseline,common_seeds");
    for name in METRIC_NAMES {
        header.push_str(&format!(",delta_{name}_mean,delta_{name}_sd"));
    }
    let mut csv = vec![header];
    for delta in deltas {
        let mut row = format!(
            "{},{},{}",
            delta.condition,
            delta.baseline_condition,
            delta.common_seeds.len()
        );
        for name in METRIC_NAMES {
            let cell = &delta.metrics[name];
            row.push_str(&format!(
                ",{},{}",
                cell.mean.map(|v| fmt3(Some(v))).unwrap_or_default(),
                cell.sample_sd.map(|v| fmt3(Some(v))).unwrap_or_default(),
            ));
        }
        csv.push(row);
    }
    write_text(&out.join("deltas.csv"), &joined_lines(&csv))?;

    let mut text = String::from(
        "Paired per-seed differences (condition - baseline), mean +/- sample SD\n\n",
    );
    for delta in deltas {
        text.push_str(&format!(
            "{} vs {} over seeds {:?}",
            delta.condition, delta.baseline_condition, delta.common_seeds
        ));
        if !delta.excluded_seeds.is_empty() {
            text.push_str(&format!(" (excluded: {:?})", delta.excluded_seeds));
        }
        text.push('\n');
        for name in METRIC_NAMES {
            let cell = &delta.metrics[name];
            let sd = cell
                .sample_sd
                .map(|v| format!(" +/- {}", fmt3(Some(v))))
                .unwrap_or_default();
            text.push_str(&format!(
                "  {name:<13} {}{sd}\n",
                cell.mean.map(|v| fmt3(Some(v))).unwrap_or_else(|| "n/a".to_string()),
            ));
        }
        text.push('\n');
    }
    write_text(&out.join("deltas.txt"), &text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct MatrixRow {
    condition: String,
    seed: i64,
    tp: u64,
    fp: u64,
    tn: u64,
    #[serde(rename = "fn")]
    fn_: u64,
}

pub fn cmd_sensitivity(
    matrices_path: &Path,
    fp_scores: &[f64],
    out: &Path,
) -> anyhow::Result<crate::evaluation::SensitivityTable> {
    let text = std::fs::read_to_string(matrices_path)
        .with_context(|| format!("cli: cannot read {}", matrices_path.display()))?;
    let mut matrices = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: MatrixRow = serde_json::from_str(line)
            .with_context(|| format!("cli: malformed matrix line {}", index + 1))?;
        matrices.push((
            row.condition,
            row.seed,
            ConfusionMatrix::from_counts(row.tp, row.fp, row.tn, row.fn_),
        ));
    }
    let table = sensitivity_table(&matrices, fp_scores)
        .context("evaluation.sensitivity_table failed")?;

    std::fs::create_dir_all(out).with_context(|| format!("cli: cannot create {}", out.display()))?;
    let mut header = String::from("condition,runs");
    for fp in &table.fp_scores {
        header.push_str(&format!(",fp_{fp}_mean,fp_{fp}_sd"));
    }
    let mut csv = vec![header];
    for row in &table.rows {
        let mut line = format!("{},{}", row.condition, row.runs);
        for cell in &row.utilities {
            line.push_str(&format!(
                ",{},{}",
                cell.mean.map(|v| fmt3(Some(v))).unwrap_or_default(),
                cell.sample_sd.map(|v| fmt3(Some(v))).unwrap_or_default(),
            ));
        }
        csv.push(line);
    }
    write_text(&out.join("sensitivity.csv"), &joined_lines(&csv))?;

    let mut report = format!(
        "Label-level utility under alternative false-positive scores ({}).\n\
         Recomputed from archived confusion matrices; calibration was NOT rerun\n\
         under each score.\n\n",
        table.label
    );
    for row in &table.rows {
        report.push_str(&format!("{} (runs={})\n", row.condition, row.runs));
        for (fp, cell) in table.fp_scores.iter().zip(&row.utilities) {
            let sd = cell
                .sample_sd
                .map(|v| format!(" +/- {}", fmt3(Some(v))))
                .unwrap_or_default();
            report.push_str(&format!(
                "  fp_score={fp:<5} {}{sd}\n",
                cell.mean.map(|v| fmt3(Some(v))).unwrap_or_else(|| "n/a".to_string()),
            ));
        }
        report.push('\n');
    }
    write_text(&out.join("sensitivity.txt"), &report)?;
    write_json(&out.join("sensitivity.json"), &table)?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// roundtrip / inspect
// ---------------------------------------------------------------------------

pub fn cmd_roundtrip(
    config_path: &Path,
    artifact_path: &Path,
    split: SplitChoice,
) -> anyhow::Result<crate::artifact::RoundTripReport> {
    let config = load_config(config_path, &CompileOverrides::default())
        .context("cli: config validation failed")?;
    let program = load_artifact(artifact_path).context("artifact.load_artifact failed")?;

    // When the artifact sits inside a bundle, verify every member digest and
    // the completeness of the provenance record.
    if let Some(dir) = artifact_path.parent() {
        if dir.join("manifest.json").exists() {
            let mismatches = verify_bundle(dir).context("artifact.verify_bundle failed")?;
            if !mismatches.is_empty() {
                bail!("artifact.verify_bundle: digest mismatch in {mismatches:?}");
            }
        }
        let provenance = dir.join("provenance.json");
        if provenance.exists() {
            let value: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(&provenance)?)
                    .context("cli: provenance is not valid JSON")?;
            let missing = verify_provenance_fields(&value);
            if !missing.is_empty() {
                bail!("artifact.verify_provenance: missing field(s) {missing:?}");
            }
        }
    }

    let (_, records) = load_contract_and_records(&config)?;
    let splits = stratified_split(&records, config.split.sizes, config.split.seed)
        .context("dataset.stratified_split failed")?;
    let selected = splits.by_name(split.name()).expect("valid split name");

    // Two independent backend instances replay the same script from the
    // start, one per evaluation pass.
    let (backend_a, _) = config.student.build(Role::Student)?;
    let (backend_b, _) = config.student.build(Role::Student)?;
    let save_dir = config.out.join("roundtrip");
    std::fs::create_dir_all(&save_dir)
        .with_context(|| format!("cli: cannot create {}", save_dir.display()))?;
    let save_path = save_dir.join("roundtrip.compiled.json");
    let report = roundtrip_check(
        &program,
        selected,
        backend_a.as_ref(),
        backend_b.as_ref(),
        &config.policy,
        config.metric,
        config.optimizer.num_threads,
        &save_path,
    )
    .context("artifact.roundtrip_check failed")?;
    write_json(&save_dir.join("roundtrip_report.json"), &report)?;
    Ok(report)
}

pub fn cmd_inspect(artifact_path: &Path, provenance_path: Option<&Path>) -> anyhow::Result<String> {
    let program = load_artifact(artifact_path).context("artifact.load_artifact failed")?;
    let contract = &program.contract;
    let mut dump = String::new();
    dump.push_str(&format!("contract_id:            {}\n", contract.contract_id()));
    dump.push_str(&format!("interface_fingerprint:  {}\n", contract.interface_fingerprint()));
    dump.push_str(&format!("student model:          {} (temperature {})\n",
        program.student_settings.model_id, program.student_settings.temperature));
    dump.push_str("\n== fixed criteria ==\n");
    dump.push_str(contract.criteria_text().trim_end());
    dump.push_str("\n\n== fixed interface ==\n");
    for field in contract.input_fields() {
        dump.push_str(&format!("  input  {}: {}\n", field.name, field.description));
    }
    for field in contract.output_fields() {
        let tokens = match &field.constraint {
            Some(crate::contract::FieldConstraint::TokenSet(tokens)) => {
                format!(" [tokens: {}]", tokens.join(", "))
            }
            _ => String::new(),
        };
        dump.push_str(&format!("  output {}: {}{tokens}\n", field.name, field.description));
    }
    dump.push_str("\n== harness (mutable layer) ==\n");
    dump.push_str(contract.harness_text().trim_end());
    dump.push('\n');

    let provenance_file = provenance_path
        .map(Path::to_path_buf)
        .or_else(|| artifact_path.parent().map(|d| d.join("provenance.json")));
    match provenance_file {
        Some(path) if path.exists() => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("cli: cannot read {}", path.display()))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).context("cli: provenance is not valid JSON")?;
            dump.push_str("\n== provenance checklist ==\n");
            let missing = verify_provenance_fields(&value);
            for field in crate::artifact::PROVENANCE_FIELDS {
                let status = if missing.contains(&field.to_string()) {
                    "MISSING"
                } else if value.get(field) == Some(&serde_json::Value::String("unavailable".into())) {
                    "unavailable"
                } else {
                    "present"
                };
                dump.push_str(&format!("  {field:<22} {status}\n"));
            }
            if !missing.is_empty() {
                dump.push_str("provenance INCOMPLETE\n");
            }
            if let Some(baseline) = value.get("baseline_harness").and_then(|v| v.as_str()) {
                dump.push_str("\n== harness diff vs recorded baseline ==\n");
                if baseline == contract.harness_text() {
                    dump.push_str("(harness unchanged from baseline)\n");
                } else {
                    dump.push_str(&line_diff(baseline, contract.harness_text()));
                }
            }
        }
        _ => {
            dump.push_str("\n(no provenance file found; checklist skipped)\n");
        }
    }
    Ok(dump)
}

/// Minimal line-level diff: common lines keep a two-space margin, removals
/// are prefixed `- `, additions `+ `.
fn line_diff(old: &str, new: &str) -> String {
    let a: Vec<&str> = old.lines().collect();
    let b: Vec<&str> = new.lines().collect();
    // LCS table over lines; harness texts are small.
    let mut lcs = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut out = String::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            out.push_str(&format!("  {}\n", a[i]));
            i += 1;
            j += 1;
        } else if lcs[i + 1][j] >= lcs[i][j + 1] {
            out.push_str(&format!("- {}\n", a[i]));
            i += 1;
        } else {
            out.push_str(&format!("+ {}\n", b[j]));
            j += 1;
        }
    }
    for line in &a[i..] {
        out.push_str(&format!("- {line}\n"));
    }
    for line in &b[j..] {
        out.push_str(&format!("+ {line}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// init-example
// ---------------------------------------------------------------------------

const EXAMPLE_CRITERIA: &str = "INCLUSION CRITERIA:
  - The paper is an empirical study in software engineering
    (field of computer science).
  - The paper is a primary study.
  - The paper is focused on predicting defects in a software system
    using machine learning techniques.
  - The paper evaluates, analyses, or compares prediction methods and
    provides evidence for efficiency.

EXCLUSION CRITERIA:
  - The paper was not a peer-reviewed article, conference proceeding,
    or book chapter.
  - The publication's language was other than English.
  - The same or limited results were already published and included in
    another study.
";

const EXAMPLE_HARNESS: &str = "Screen titles and abstracts for a systematic review of machine-learning-based
software defect prediction.

Context:
- The review focuses on primary empirical studies in software engineering.
- Relevant studies predict defects, bugs, faults, or fault-proneness in software artefacts.
- Relevant studies use machine learning and report an evaluation or comparison.
- Exclude reviews, surveys, bug triage, issue severity, duplicate-report detection,
  and studies that do not predict defective software artefacts.

Output:
- checks: brief fragments that connect the decision to the criteria.
- label: exactly one token, include or exclude.
";

const EXAMPLE_REFLECTED_HARNESS: &str = "Screen titles and abstracts for a systematic review of machine-learning-based
software defect prediction.

Decision procedure:
- Confirm the paper is a primary empirical study in software engineering.
- Confirm it predicts defects, bugs, faults, or fault-proneness in software artefacts.
- Confirm machine learning is used and an evaluation or comparison is reported.
- Exclude reviews, surveys, bug triage, severity or duplicate-report work, and
  papers that do not predict defective software artefacts.
- When the evidence is borderline but the criteria could plausibly be satisfied,
  prefer include.

Output rules:
- checks: 2-5 short bullet fragments naming the criteria applied, 8 words or fewer each.
- label: exactly one token, include or exclude.";

fn example_records() -> Vec<Record> {
    let rows: [(&str, &str, &str, &str); 12] = [
        (
            "d01",
            "Predicting software defects with ensemble learning on static code metrics",
            "We train ensembles of decision trees on static code metrics from ten open-source \
             systems and evaluate precision, recall, and F1 against held-out releases. Results \
             show ensembles outperform single classifiers for defect-proneness prediction.",
            "include",
        ),
        (
            "d02",
            "Cross-project defect prediction using transfer learning",
            "This empirical study applies transfer learning to predict defective modules across \
             projects. We compare against within-project baselines on 24 datasets and report \
             statistically significant improvements in recall.",
            "include",
        ),
        (
            "d03",
            "A replication study of static-metric defect classifiers",
            "We replicate three published defect prediction models on new industrial data and \
             analyse how performance degrades. The replication confirms two of three original \
             conclusions and quantifies the gap.",
            "include",
        ),
        (
            "d04",
            "Deep learning for fault-proneness prediction in object-oriented systems",
            "A convolutional model over abstract syntax trees predicts fault-prone classes. We \
             evaluate on six systems and compare with logistic regression and random forests.",
            "include",
        ),
        (
            "d05",
            "Feature selection for software defect models: an empirical comparison",
            "We compare eight feature selection strategies for defect prediction and measure \
             their effect on AUC across 15 datasets, providing guidance on method choice.",
            "include",
        ),
        (
            "d06",
            "Just-in-time defect prediction on commit histories",
            "Using change-level features from commit histories, we predict defect-inducing \
             commits in real time. An evaluation on five large repositories reports effort-aware \
             performance measures.",
            "include",
        ),
        (
            "d07",
            "Evaluating class-imbalance strategies for bug prediction",
            "This paper empirically evaluates oversampling, undersampling, and cost-sensitive \
             learning for imbalanced defect data, comparing their effect across learners and \
             reporting practical recommendations.",
            "include",
        ),
        (
            "d08",
            "A survey of machine learning applications in software engineering",
            "We survey 300 papers applying machine learning across software engineering tasks \
             and summarise trends, datasets, and open challenges. No new prediction model is \
             proposed or evaluated.",
            "exclude",
        ),
        (
            "d09",
            "Automatic bug triage with developer recommendation",
            "We recommend developers for incoming bug reports using text classification over \
             report histories. The approach routes reports to suitable developers and reduces \
             reassignment rates.",
            "exclude",
        ),
        (
            "d10",
            "Severity classification of bug reports using natural language processing",
            "This study classifies the severity of issue-tracker reports with transformer \
             models. We do not predict defective artefacts; we categorise already-reported \
             issues by severity.",
            "exclude",
        ),
        (
            "d11",
            "Detecting duplicate crash reports at scale",
            "We present a similarity pipeline that detects duplicate crash reports in large \
             trackers, reducing triage workload. Evaluation covers deduplication accuracy and \
             latency.",
            "exclude",
        ),
        (
            "d12",
            "Manual inspection checklists for code quality assurance",
            "We propose structured checklists for manual code inspection and report reviewer \
             agreement in two case studies. The approach involves no machine learning and no \
             defect prediction model.",
            "exclude",
        ),
    ];
    rows.iter()
        .map(|(id, title, abstract_text, label)| Record {
            record_id: id.to_string(),
            title: title.to_string(),
            abstract_text: abstract_text.to_string(),
            criteria: String::new(),
            gold_label: label.to_string(),
        })
        .collect()
}

fn example_student_script() -> Vec<String> {
    let answer = |checks: &str, label: &str| {
        format!("[[ ## checks ## ]]\n{checks}\n[[ ## label ## ]]\n{label}\n[[ ## completed ## ]]")
    };
    vec![
        answer("- primary empirical study\n- ML defect prediction evaluated", "include"),
        answer("- predicts fault-proneness with ML\n- reports comparison", "include"),
        answer("- survey, not primary study\n- no prediction evaluation", "exclude"),
        answer("- bug triage, not defect prediction\n- excluded by criteria", "exclude"),
        answer("- empirical defect prediction\n- evaluation reported", "include"),
        answer("- no machine learning used\n- manual technique only", "exclude"),
    ]
}

pub fn cmd_init_example(out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("cli: cannot create {}", out.display()))?;
    let mut written = Vec::new();

    let contract = TaskContract::new(
        EXAMPLE_CRITERIA,
        vec![
            crate::contract::FieldSpec::input("criteria", "Inclusion and exclusion criteria."),
            crate::contract::FieldSpec::input("title", "Paper title."),
            crate::contract::FieldSpec::input("abstract", "Paper abstract."),
        ],
        vec![
            crate::contract::FieldSpec::output_text(
                "checks",
                "Short fragments supporting the decision.",
            ),
            crate::contract::FieldSpec::output_tokens(
                "label",
                "Exactly one token: include or exclude.",
                &["include", "exclude"],
            ),
        ],
        EXAMPLE_HARNESS,
    )
    .context("task_contract.new_contract failed")?
    .with_contract_id("abstract-screening");
    let contract_path = out.join("contract.json");
    std::fs::write(&contract_path, contract.to_json_string())
        .with_context(|| format!("cli: cannot write {}", contract_path.display()))?;
    written.push(contract_path);

    let records_path = out.join("records.jsonl");
    write_records(&records_path, &example_records())
        .with_context(|| format!("cli: cannot write {}", records_path.display()))?;
    written.push(records_path);

    let student_script_path = out.join("student_script.json");
    write_json(&student_script_path, &example_student_script())?;
    written.push(student_script_path);

    let reflection_script_path = out.join("reflection_script.json");
    write_json(&reflection_script_path, &vec![EXAMPLE_REFLECTED_HARNESS.to_string()])?;
    written.push(reflection_script_path);

    let config = serde_json::json!({
        "contract": "contract.json",
        "dataset": "records.jsonl",
        "split": {"train": 4, "val": 4, "test": 4, "seed": 10},
        "policy": {"fp_score": 0.4, "checks_cap": 0.6, "positive_label": "include"},
        "metric": "compact",
        "optimizer": {
            "max_full_evals": 2,
            "reflection_minibatch_size": 2,
            "num_threads": 1,
            "seed": 10,
            "skip_perfect_score": true,
            "track_stats": true,
            "parent_strategy": "frontier"
        },
        "student": {
            "kind": "mock",
            "model_id": "mock/student",
            "script": "student_script.json",
            "cycle": true
        },
        "reflection": {
            "kind": "mock",
            "model_id": "mock/reflection",
            "script": "reflection_script.json",
            "cycle": true
        },
        "out": "runs/demo"
    });
    let config_path = out.join("config.json");
    write_json(&config_path, &config)?;
    written.push(config_path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// small file helpers
// ---------------------------------------------------------------------------

fn joined_lines(lines: &[String]) -> String {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    text
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("cli: cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("cli: cannot serialize {}", path.display()))?;
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_diff_marks_additions_and_removals() {
        let old = "alpha\nbeta\ngamma";
        let new = "alpha\ngamma\ndelta";
        let diff = line_diff(old, new);
        assert!(diff.contains("  alpha"));
        assert!(diff.contains("- beta"));
        assert!(diff.contains("+ delta"));
        assert!(diff.contains("  gamma"));
    }

    #[test]
    fn condition_labels_and_slugs() {
        assert_eq!(condition_label(12), "max_eval=12");
        assert_eq!(condition_slug("max_eval=12"), "max_eval_12");
    }

    #[test]
    fn example_records_are_twelve_with_both_labels() {
        let records = example_records();
        assert_eq!(records.len(), 12);
        let includes = records.iter().filter(|r| r.gold_label == "include").count();
        assert_eq!(includes, 7);
    }
}
