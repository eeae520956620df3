//! Held-out evaluation and confusion-matrix statistics.
//!
//! Predictions are collected in record order (parallel workers write into
//! pre-assigned slots), counted into a confusion matrix, and summarized as
//! derived statistics. Any statistic with a zero denominator is reported as
//! absent, never as zero. Multi-seed aggregation uses sample standard
//! deviation (n-1); paired deltas match runs by seed and report exclusions.
//!
//! Invalid observed labels (parse failures, off-vocabulary tokens) are
//! counted as false negatives when the gold label is positive. When the gold
//! label is negative they enter no confusion cell: they are tallied in an
//! explicit invalid counter, still count toward `n`, and are treated as
//! incorrect by accuracy. This keeps precision undistorted while refusing to
//! reward invalid output.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, ChatExchange, GenerationSettings, RenderError, RunLog,
                     complete_at, render_messages};
use crate::contract::TaskContract;
use crate::dataset::{Record, normalize_label};
use crate::metric::{MetricError, MetricKind, MetricOutcome, Prediction, ScoringPolicy,
                    utility_from_confusion};

/// Errors raised during evaluation and statistics.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty record list")]
    EmptyRecords,
    #[error("cannot aggregate an empty run list")]
    EmptyRuns,
    #[error("mixed conditions in one aggregate: expected '{expected}', found '{found}'")]
    MixedConditions { expected: String, found: String },
    #[error("seed {seed} appears more than once in condition '{condition}'")]
    DuplicateSeed { seed: i64, condition: String },
    #[error("no seeds are present in both run sets")]
    NoCommonSeeds,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unknown split '{0}'")]
    UnknownSplit(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Binary confusion counts; the positive class is the policy's
/// `positive_label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_positives: u64,
    #[serde(rename = "fp")]
    pub false_positives: u64,
    #[serde(rename = "tn")]
    pub true_negatives: u64,
    #[serde(rename = "fn")]
    pub false_negatives: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self {
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

/// Derived statistics of one evaluation run. Absent values mean the
/// denominator was zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub condition: String,
    pub seed: i64,
    pub n: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub mcc: Option<f64>,
    pub kappa: Option<f64>,
    pub include_rate: Option<f64>,
    pub utility: Option<f64>,
}

/// Canonical metric order for tables and reports.
pub const METRIC_NAMES: [&str; 8] = [
    "accuracy",
    "precision",
    "recall",
    "f1",
    "mcc",
    "kappa",
    "include_rate",
    "utility",
];

impl RunMetrics {
    /// Attach run identity for aggregation and pairing.
    pub fn tagged(mut self, condition: &str, seed: i64) -> Self {
        self.condition = condition.to_string();
        self.seed = seed;
        self
    }

    pub fn metric_value(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "mcc" => self.mcc,
            "kappa" => self.kappa,
            "include_rate" => self.include_rate,
            "utility" => self.utility,
            _ => None,
        }
    }
}

/// Mean and sample SD of one metric across runs, with pairwise-exclusion
/// bookkeeping. The SD of a single value is undefined and reported absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: Option<f64>,
    pub sample_sd: Option<f64>,
    pub present: usize,
    pub excluded: usize,
}

/// Per-metric aggregate over runs of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub condition: String,
    pub run_count: usize,
    pub metrics: BTreeMap<String, MetricAggregate>,
}

/// Per-metric aggregate of per-seed differences (condition - baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub condition: String,
    pub baseline_condition: String,
    pub common_seeds: Vec<i64>,
    pub excluded_seeds: Vec<i64>,
    pub metrics: BTreeMap<String, MetricAggregate>,
}

/// One row of the post-hoc sensitivity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub condition: String,
    pub runs: usize,
    /// One cell per requested `fp_score`, in request order.
    pub utilities: Vec<MetricAggregate>,
}

/// Post-hoc utility recomputation over archived confusion matrices. This
/// does not rerun calibration under each score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub label: String,
    pub fp_scores: Vec<f64>,
    pub rows: Vec<SensitivityRow>,
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Round half-to-even at three decimals, for display.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round_ties_even() / 1000.0
}

/// Display an optional statistic at three decimals; absent values print as
/// `n/a`.
pub fn fmt3(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.3}", round3(v)),
        None => "n/a".to_string(),
    }
}

/// Derive the full statistic set from a confusion matrix.
pub fn compute_metrics(cm: &ConfusionMatrix, policy: &ScoringPolicy) -> Result<RunMetrics, EvalError> {
    compute_metrics_with_invalid(cm, 0, policy)
}

/// As [`compute_metrics`], with `invalid_gold_negative` extra records whose
/// output was invalid while the gold label was negative. They count toward
/// `n` (and against accuracy) without occupying any confusion cell.
pub fn compute_metrics_with_invalid(
    cm: &ConfusionMatrix,
    invalid_gold_negative: u64,
    policy: &ScoringPolicy,
) -> Result<RunMetrics, EvalError> {
    let n = cm.total() + invalid_gold_negative;
    if n == 0 {
        return Err(EvalError::EmptyRecords);
    }
    let nf = n as f64;
    let (tp, fp, tn, fn_) = (
        cm.true_positives as f64,
        cm.false_positives as f64,
        cm.true_negatives as f64,
        cm.false_negatives as f64,
    );

    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    let accuracy = ratio(tp + tn, nf);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let mcc_den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = (mcc_den > 0.0).then(|| (tp * tn - fp * fn_) / mcc_den.sqrt());

    // Expected agreement under the run-specific marginal rates. Invalid
    // predictions fall outside both predicted classes.
    let p_o = accuracy.unwrap_or(0.0);
    let p_e = ((tp + fp) / nf) * ((tp + fn_) / nf)
        + ((tn + fn_) / nf) * ((tn + fp + invalid_gold_negative as f64) / nf);
    let kappa = ((1.0 - p_e).abs() > f64::EPSILON).then(|| (p_o - p_e) / (1.0 - p_e));

    let include_rate = ratio(tp + fp, nf);
    let utility = Some((tp + tn + policy.false_positive_score * fp) / nf);

    Ok(RunMetrics {
        condition: String::new(),
        seed: 0,
        n,
        accuracy,
        precision,
        recall,
        f1,
        mcc,
        kappa,
        include_rate,
        utility,
    })
}

/// Per-metric mean and sample SD across runs of the same condition.
pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<AggregateStats, EvalError> {
    let first = runs.first().ok_or(EvalError::EmptyRuns)?;
    for run in runs {
        if run.condition != first.condition {
            return Err(EvalError::MixedConditions {
                expected: first.condition.clone(),
                found: run.condition.clone(),
            });
        }
    }
    let mut metrics = BTreeMap::new();
    for name in METRIC_NAMES {
        let values: Vec<f64> = runs.iter().filter_map(|r| r.metric_value(name)).collect();
        metrics.insert(name.to_string(), summarize(&values, runs.len()));
    }
    Ok(AggregateStats {
        condition: first.condition.clone(),
        run_count: runs.len(),
        metrics,
    })
}

/// Per-seed differences (condition - baseline), aggregated. Seeds missing
/// from either side are excluded and reported.
pub fn paired_deltas(
    condition_runs: &[RunMetrics],
    baseline_runs: &[RunMetrics],
) -> Result<PairedDelta, EvalError> {
    let condition = index_by_seed(condition_runs)?;
    let baseline = index_by_seed(baseline_runs)?;

    let condition_seeds: BTreeSet<i64> = condition.keys().copied().collect();
    let baseline_seeds: BTreeSet<i64> = baseline.keys().copied().collect();
    let common: Vec<i64> = condition_seeds.intersection(&baseline_seeds).copied().collect();
    let excluded: Vec<i64> = condition_seeds
        .symmetric_difference(&baseline_seeds)
        .copied()
        .collect();
    if common.is_empty() {
        return Err(EvalError::NoCommonSeeds);
    }

    let mut metrics = BTreeMap::new();
    for name in METRIC_NAMES {
        let deltas: Vec<f64> = common
            .iter()
            .filter_map(|seed| {
                let c = condition[seed].metric_value(name)?;
                let b = baseline[seed].metric_value(name)?;
                Some(c - b)
            })
            .collect();
        metrics.insert(name.to_string(), summarize(&deltas, common.len()));
    }
    Ok(PairedDelta {
        condition: condition_runs
            .first()
            .map(|r| r.condition.clone())
            .unwrap_or_default(),
        baseline_condition: baseline_runs
            .first()
            .map(|r| r.condition.clone())
            .unwrap_or_default(),
        common_seeds: common,
        excluded_seeds: excluded,
        metrics,
    })
}

/// Recompute label-level utility per archived matrix per `fp_score`, then
/// aggregate per condition. Explicitly post-hoc. Duplicate (condition, seed)
/// entries are merged last-wins, log-style.
pub fn sensitivity_table(
    matrices: &[(String, i64, ConfusionMatrix)],
    fp_scores: &[f64],
) -> Result<SensitivityTable, EvalError> {
    if fp_scores.is_empty() {
        return Err(EvalError::EmptyInput("no fp_scores requested"));
    }
    if matrices.is_empty() {
        return Err(EvalError::EmptyInput("no confusion matrices supplied"));
    }

    let mut condition_order: Vec<String> = Vec::new();
    let mut by_condition: BTreeMap<String, BTreeMap<i64, ConfusionMatrix>> = BTreeMap::new();
    for (condition, seed, cm) in matrices {
        if !condition_order.contains(condition) {
            condition_order.push(condition.clone());
        }
        by_condition
            .entry(condition.clone())
            .or_default()
            .insert(*seed, *cm);
    }

    let mut rows = Vec::with_capacity(condition_order.len());
    for condition in condition_order {
        let per_seed = &by_condition[&condition];
        let mut utilities = Vec::with_capacity(fp_scores.len());
        for &fp_score in fp_scores {
            let values: Vec<f64> = per_seed
                .values()
                .map(|cm| utility_from_confusion(cm, fp_score))
                .collect::<Result<_, _>>()?;
            utilities.push(summarize(&values, per_seed.len()));
        }
        rows.push(SensitivityRow {
            condition,
            runs: per_seed.len(),
            utilities,
        });
    }
    Ok(SensitivityTable {
        label: "post-hoc".to_string(),
        fp_scores: fp_scores.to_vec(),
        rows,
    })
}

fn index_by_seed(runs: &[RunMetrics]) -> Result<BTreeMap<i64, &RunMetrics>, EvalError> {
    let mut map = BTreeMap::new();
    for run in runs {
        if map.insert(run.seed, run).is_some() {
            return Err(EvalError::DuplicateSeed {
                seed: run.seed,
                condition: run.condition.clone(),
            });
        }
    }
    Ok(map)
}

fn summarize(values: &[f64], attempted: usize) -> MetricAggregate {
    let present = values.len();
    let mean = (present > 0).then(|| values.iter().sum::<f64>() / present as f64);
    let sample_sd = (present >= 2).then(|| {
        let m = mean.expect("mean exists when values do");
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (present - 1) as f64).sqrt()
    });
    MetricAggregate {
        mean,
        sample_sd,
        present,
        excluded: attempted - present,
    }
}

// ---------------------------------------------------------------------------
// Running a program over records
// ---------------------------------------------------------------------------

/// One record's full evaluation: the exchange, the parsed prediction, and
/// the metric outcome.
#[derive(Debug, Clone)]
pub struct ExampleRun {
    pub record_index: usize,
    pub exchange: ChatExchange,
    pub prediction: Prediction,
    pub outcome: MetricOutcome,
}

/// One line of the prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub record_id: String,
    pub gold: String,
    pub observed: String,
    pub checks: String,
    pub score: f64,
}

/// Ordered predictions plus confusion counts for one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub rows: Vec<PredictionRow>,
    pub confusion: ConfusionMatrix,
    /// Predictions whose observed label was off-vocabulary, either gold class.
    pub invalid_count: u64,
    /// The subset of invalid predictions with a negative gold label; these
    /// occupy no confusion cell.
    pub invalid_gold_negative: u64,
}

impl EvalOutcome {
    /// The ordered (gold, observed) list used for round-trip equivalence.
    pub fn gold_observed_pairs(&self) -> Vec<(String, String)> {
        self.rows
            .iter()
            .map(|r| (r.gold.clone(), r.observed.clone()))
            .collect()
    }
}

/// Run the student over `records` and score each response, preserving record
/// order. Up to `num_threads` records are in flight at once; mock call slots
/// are reserved per record index before any worker starts, so results do not
/// depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_student_batch(
    contract: &TaskContract,
    settings: &GenerationSettings,
    backend: &dyn Backend,
    records: &[Record],
    policy: &ScoringPolicy,
    metric: MetricKind,
    num_threads: usize,
    log: &RunLog,
) -> Result<Vec<ExampleRun>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let overridden = records
        .iter()
        .filter(|r| !r.criteria.trim().is_empty() && r.criteria != contract.criteria_text())
        .count();
    if overridden > 0 {
        log::warn!(
            "{overridden} record(s) carry per-record criteria overriding the contract's block"
        );
    }

    let base = backend.reserve(records.len() as u64);
    let run_one = |index: usize| -> Result<ExampleRun, EvalError> {
        let record = &records[index];
        let mut inputs = BTreeMap::new();
        for field in contract.input_fields() {
            let value = match field.name.as_str() {
                "criteria" => record.criteria_or(contract.criteria_text()).to_string(),
                "title" => record.title.clone(),
                "abstract" => record.abstract_text.clone(),
                _ => {
                    return Err(EvalError::Render(RenderError::MissingInput {
                        field: field.name.clone(),
                    }));
                }
            };
            inputs.insert(field.name.clone(), value);
        }
        let (system_text, user_text) = render_messages(contract, &inputs)?;
        let exchange = complete_at(
            backend,
            settings,
            &system_text,
            &user_text,
            base + index as u64,
            log,
        )?;
        let prediction = crate::backend::parse_fields(&exchange.response_text, contract);
        let outcome = metric.evaluate(record, &prediction, policy)?;
        Ok(ExampleRun {
            record_index: index,
            exchange,
            prediction,
            outcome,
        })
    };

    let n = records.len();
    let workers = num_threads.max(1).min(n);
    if workers == 1 {
        return (0..n).map(run_one).collect();
    }

    let slots: Vec<Mutex<Option<Result<ExampleRun, EvalError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                loop {
                    let index = next.fetch_add(1, Ordering::SeqCst);
                    if index >= n {
                        break;
                    }
                    let result = run_one(index);
                    *slots[index].lock().expect("result slot") = Some(result);
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("worker filled slot"))
        .collect()
}

/// Evaluate a program (contract + settings + backend) on records: ordered
/// predictions plus the confusion matrix.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_program(
    contract: &TaskContract,
    settings: &GenerationSettings,
    backend: &dyn Backend,
    records: &[Record],
    policy: &ScoringPolicy,
    metric: MetricKind,
    num_threads: usize,
    log: &RunLog,
) -> Result<EvalOutcome, EvalError> {
    policy.validate()?;
    let runs = run_student_batch(
        contract, settings, backend, records, policy, metric, num_threads, log,
    )?;

    let positive = policy.positive_label.as_str();
    let negative = policy.negative_label();
    let mut confusion = ConfusionMatrix::default();
    let mut invalid_count = 0u64;
    let mut invalid_gold_negative = 0u64;
    let mut rows = Vec::with_capacity(records.len());

    for run in &runs {
        let record = &records[run.record_index];
        let gold = normalize_label(&record.gold_label);
        let observed = normalize_label(&run.prediction.label_raw);
        if observed == positive {
            if gold == positive {
                confusion.true_positives += 1;
            } else {
                confusion.false_positives += 1;
            }
        } else if observed == negative {
            if gold == negative {
                confusion.true_negatives += 1;
            } else {
                confusion.false_negatives += 1;
            }
        } else {
            invalid_count += 1;
            if gold == positive {
                confusion.false_negatives += 1;
            } else {
                invalid_gold_negative += 1;
            }
        }
        rows.push(PredictionRow {
            record_id: record.record_id.clone(),
            gold,
            observed,
            checks: run.prediction.checks.clone(),
            score: run.outcome.score,
        });
    }

    Ok(EvalOutcome {
        rows,
        confusion,
        invalid_count,
        invalid_gold_negative,
    })
}
