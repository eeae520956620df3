//! The budget-bounded reflective calibration loop.
//!
//! The loop full-evaluates the starting harness on the validation set (one
//! budget unit), then repeatedly: selects a parent candidate, draws a seeded
//! reflection minibatch from the training set, runs the parent on it, shows
//! the failures plus metric feedback to the reflection model, and gates the
//! proposed replacement harness on the same minibatch. Only proposals whose
//! minibatch mean strictly beats the parent's earn a full validation
//! evaluation (the scarce budget unit) and a place in the candidate pool.
//!
//! Fixed layers are untouchable by construction: every proposal is applied
//! through `TaskContract::with_harness`, so every candidate shares the
//! baseline's interface fingerprint.
//!
//! The loop ends when the budget is exhausted or after
//! [`STALL_LIMIT`] consecutive rejected proposals (the budget can otherwise
//! never be spent, e.g. a reflector that always returns the parent harness).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::artifact::CompiledProgram;
use crate::backend::{Backend, ChatExchange, GenerationSettings, RunLog, complete};
use crate::contract::TaskContract;
use crate::dataset::Record;
use crate::evaluation::{EvalError, PredictionRow, evaluate_program, run_student_batch};
use crate::metric::{MetricKind, MetricOutcome, ScoringPolicy};

/// Consecutive rejected proposals after which the loop gives up on spending
/// the remaining budget.
pub const STALL_LIMIT: u32 = 5;

/// Errors raised by compilation.
#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("optimization aborted after {} trace event(s): {source}", partial_trace.events.len())]
    Aborted {
        #[source]
        source: Box<EvalError>,
        partial_trace: Box<OptimizationTrace>,
    },
}

/// How the next parent candidate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParentStrategy {
    /// Per-example score frontier: for every validation example, collect the
    /// candidates achieving the maximum score on it; sample uniformly from
    /// the union.
    #[default]
    Frontier,
    /// Highest mean validation score, ties to the lowest candidate id.
    BestFirst,
}

/// Search-budget and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_full_evals: u32,
    pub reflection_minibatch_size: usize,
    #[serde(default = "default_num_threads")]
    pub num_threads: usize,
    pub seed: i64,
    #[serde(default = "default_true")]
    pub skip_perfect_score: bool,
    /// When false, trace events omit per-example score vectors (the event
    /// sequence, ids, and budget accounting are always recorded).
    #[serde(default = "default_true")]
    pub track_stats: bool,
    #[serde(default)]
    pub parent_strategy: ParentStrategy,
}

fn default_num_threads() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl OptimizerConfig {
    fn validate(&self, train_len: usize, val_len: usize) -> Result<(), OptimizeError> {
        if self.max_full_evals < 1 {
            return Err(OptimizeError::Config(
                "max_full_evals must be at least 1".to_string(),
            ));
        }
        if self.reflection_minibatch_size < 1 {
            return Err(OptimizeError::Config(
                "reflection_minibatch_size must be at least 1".to_string(),
            ));
        }
        if self.reflection_minibatch_size > train_len {
            return Err(OptimizeError::Config(format!(
                "reflection_minibatch_size {} exceeds training-set size {train_len}",
                self.reflection_minibatch_size
            )));
        }
        if self.num_threads < 1 {
            return Err(OptimizeError::Config(
                "num_threads must be at least 1".to_string(),
            ));
        }
        if val_len == 0 {
            return Err(OptimizeError::Config(
                "validation set must be non-empty".to_string(),
            ));
        }
        Ok(())
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrigin {
    Baseline,
    Reflection,
}

/// One harness variant with its validation scores and lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: u32,
    pub harness_text: String,
    pub parent_id: Option<u32>,
    pub val_scores: Vec<f64>,
    pub mean_val_score: f64,
    pub origin: CandidateOrigin,
}

/// One audited step of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    FullEval {
        candidate_id: u32,
        interface_fingerprint: String,
        scores: Vec<f64>,
    },
    MinibatchEval {
        candidate_id: u32,
        example_ids: Vec<String>,
        scores: Vec<f64>,
    },
    ReflectionCall {
        parent_id: u32,
        proposed_harness: String,
    },
    Acceptance {
        candidate_id: u32,
        interface_fingerprint: String,
        accepted: bool,
        reason: String,
    },
}

/// The full audit log of one compilation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub events: Vec<TraceEvent>,
    pub budget_used: u32,
    pub candidates: Vec<Candidate>,
}

impl OptimizationTrace {
    pub fn full_eval_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::FullEval { .. }))
            .count()
    }

    /// Events as JSON Lines, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

/// One model role: a backend plus its generation settings.
pub struct RoleBackend<'a> {
    pub backend: &'a dyn Backend,
    pub settings: GenerationSettings,
}

/// Everything `compile` returns: the winning program, the audit trace, and
/// the per-candidate validation prediction rows (for prediction logs).
#[derive(Debug)]
pub struct CompileOutcome {
    pub program: CompiledProgram,
    pub trace: OptimizationTrace,
    pub winner_id: u32,
    pub val_predictions: BTreeMap<u32, Vec<PredictionRow>>,
}

impl CompileOutcome {
    pub fn baseline(&self) -> &Candidate {
        &self.trace.candidates[0]
    }

    pub fn winner(&self) -> &Candidate {
        self.trace
            .candidates
            .iter()
            .find(|c| c.candidate_id == self.winner_id)
            .expect("winner is in the pool")
    }
}

/// Select the next parent from the pool.
pub fn select_parent<'a, R: RngExt>(
    pool: &'a [Candidate],
    strategy: ParentStrategy,
    rng: &mut R,
) -> &'a Candidate {
    debug_assert!(!pool.is_empty());
    match strategy {
        ParentStrategy::BestFirst => pool
            .iter()
            .max_by(|a, b| {
                a.mean_val_score
                    .partial_cmp(&b.mean_val_score)
                    .expect("finite scores")
                    .then(b.candidate_id.cmp(&a.candidate_id))
            })
            .expect("non-empty pool"),
        ParentStrategy::Frontier => {
            let examples = pool[0].val_scores.len();
            let mut frontier: BTreeSet<u32> = BTreeSet::new();
            for example in 0..examples {
                let best = pool
                    .iter()
                    .map(|c| c.val_scores[example])
                    .fold(f64::NEG_INFINITY, f64::max);
                for candidate in pool {
                    if candidate.val_scores[example] == best {
                        frontier.insert(candidate.candidate_id);
                    }
                }
            }
            if frontier.is_empty() {
                return &pool[0];
            }
            let ids: Vec<u32> = frontier.into_iter().collect();
            let chosen = ids[rng.random_range(0..ids.len())];
            pool.iter()
                .find(|c| c.candidate_id == chosen)
                .expect("frontier ids come from the pool")
        }
    }
}

/// Draw a reflection minibatch of `size` training indices.
///
/// With `skip_perfect`, indices the parent is already known to score
/// perfectly are excluded while enough other examples exist; when too few
/// remain, perfect-score examples backfill the batch. Sampling is without
/// replacement within the draw.
pub fn draw_minibatch<R: RngExt>(
    train_len: usize,
    known_perfect: &BTreeSet<usize>,
    size: usize,
    skip_perfect: bool,
    rng: &mut R,
) -> Vec<usize> {
    let mut eligible: Vec<usize> = if skip_perfect {
        (0..train_len).filter(|i| !known_perfect.contains(i)).collect()
    } else {
        (0..train_len).collect()
    };
    eligible.shuffle(rng);
    if eligible.len() >= size {
        eligible.truncate(size);
        return eligible;
    }
    let mut backfill: Vec<usize> = (0..train_len).filter(|i| !eligible.contains(i)).collect();
    backfill.shuffle(rng);
    eligible.extend(backfill.into_iter().take(size - eligible.len()));
    eligible
}

/// Assemble the reflection request for a parent and its minibatch results.
///
/// The request carries the parent harness verbatim, states that only the
/// harness may be rewritten, lists every example's rendered inputs, raw
/// response, score, and feedback, and asks for the full replacement harness
/// as plain text.
pub fn build_reflection_request(
    parent: &Candidate,
    minibatch_results: &[(Record, ChatExchange, MetricOutcome)],
) -> (String, String) {
    let system = "You are revising the instruction harness of a screening program.\n\n\
The scientific criteria, the input fields, the output fields, and the allowed \
decision tokens are all fixed. Only the harness text may be rewritten.\n\n\
Return the full replacement harness as plain text, with no surrounding \
commentary, code fences, or field markers."
        .to_string();

    let mut user = String::new();
    user.push_str("Current harness (verbatim, between the HARNESS lines):\n<<<HARNESS\n");
    user.push_str(&parent.harness_text);
    user.push_str("\nHARNESS>>>\n");
    for (index, (record, exchange, outcome)) in minibatch_results.iter().enumerate() {
        user.push_str(&format!(
            "\nExample {} (id={}, score={}):\n--- inputs ---\n{}\n--- model response ---\n{}\n--- feedback ---\n{}\n",
            index + 1,
            record.record_id,
            outcome.score,
            exchange.user_text,
            exchange.response_text,
            outcome.feedback,
        ));
    }
    user.push_str(
        "\nRewrite the harness so the student model fixes these failures while keeping \
correct behaviour. Return only the replacement harness text.",
    );
    (system, user)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn stream_seed(seed: i64, stream: u64) -> u64 {
    (seed as u64) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Run the calibration loop. See the module docs for the exact semantics.
#[allow(clippy::too_many_arguments)]
pub fn compile(
    contract: &TaskContract,
    train: &[Record],
    val: &[Record],
    metric: MetricKind,
    policy: &ScoringPolicy,
    student: &RoleBackend<'_>,
    reflector: &RoleBackend<'_>,
    config: &OptimizerConfig,
    log: &RunLog,
) -> Result<CompileOutcome, OptimizeError> {
    config.validate(train.len(), val.len())?;
    policy
        .validate()
        .map_err(|e| OptimizeError::Config(e.to_string()))?;

    let mut trace = OptimizationTrace::default();
    let mut contracts: BTreeMap<u32, TaskContract> = BTreeMap::new();
    let mut val_predictions: BTreeMap<u32, Vec<PredictionRow>> = BTreeMap::new();
    let mut train_cache: BTreeMap<u32, BTreeMap<usize, f64>> = BTreeMap::new();

    macro_rules! step {
        ($result:expr) => {
            match $result {
                Ok(value) => value,
                Err(error) => {
                    return Err(OptimizeError::Aborted {
                        source: Box::new(error.into()),
                        partial_trace: Box::new(trace),
                    });
                }
            }
        };
    }

    let full_eval = |candidate_contract: &TaskContract,
                         candidate_id: u32,
                         trace: &mut OptimizationTrace|
     -> Result<(Vec<f64>, Vec<PredictionRow>), EvalError> {
        let outcome = evaluate_program(
            candidate_contract,
            &student.settings,
            student.backend,
            val,
            policy,
            metric,
            config.num_threads,
            log,
        )?;
        let scores: Vec<f64> = outcome.rows.iter().map(|r| r.score).collect();
        trace.events.push(TraceEvent::FullEval {
            candidate_id,
            interface_fingerprint: candidate_contract.interface_fingerprint().to_string(),
            scores: if config.track_stats { scores.clone() } else { Vec::new() },
        });
        trace.budget_used += 1;
        Ok((scores, outcome.rows))
    };

    // Baseline: the starting harness, full-evaluated at a cost of one unit.
    let baseline_contract = contract.clone();
    let (baseline_scores, baseline_rows) = step!(full_eval(&baseline_contract, 0, &mut trace));
    let baseline = Candidate {
        candidate_id: 0,
        harness_text: baseline_contract.harness_text().to_string(),
        parent_id: None,
        val_scores: baseline_scores.clone(),
        mean_val_score: mean(&baseline_scores),
        origin: CandidateOrigin::Baseline,
    };
    let mut pool = vec![baseline];
    contracts.insert(0, baseline_contract);
    val_predictions.insert(0, baseline_rows);
    train_cache.insert(0, BTreeMap::new());

    let mut parent_rng = Xoshiro256PlusPlus::seed_from_u64(stream_seed(config.seed, 1));
    let mut next_candidate_id = 1u32;
    let mut consecutive_rejections = 0u32;
    let mut iteration = 0u64;

    while trace.budget_used < config.max_full_evals && consecutive_rejections < STALL_LIMIT {
        iteration += 1;
        let parent = select_parent(&pool, config.parent_strategy, &mut parent_rng).clone();
        let parent_contract = contracts[&parent.candidate_id].clone();

        // Seeded minibatch, skipping examples this parent already aces.
        let known_perfect: BTreeSet<usize> = train_cache[&parent.candidate_id]
            .iter()
            .filter(|(_, score)| **score >= policy.correct_score)
            .map(|(index, _)| *index)
            .collect();
        let mut minibatch_rng =
            Xoshiro256PlusPlus::seed_from_u64(stream_seed(config.seed, 2).wrapping_add(iteration));
        let minibatch = draw_minibatch(
            train.len(),
            &known_perfect,
            config.reflection_minibatch_size,
            config.skip_perfect_score,
            &mut minibatch_rng,
        );
        let minibatch_records: Vec<Record> =
            minibatch.iter().map(|&i| train[i].clone()).collect();
        let example_ids: Vec<String> =
            minibatch_records.iter().map(|r| r.record_id.clone()).collect();

        // Parent on the minibatch; these results feed the reflector.
        let parent_runs = step!(run_student_batch(
            &parent_contract,
            &student.settings,
            student.backend,
            &minibatch_records,
            policy,
            metric,
            config.num_threads,
            log,
        ));
        let parent_scores: Vec<f64> = parent_runs.iter().map(|r| r.outcome.score).collect();
        trace.events.push(TraceEvent::MinibatchEval {
            candidate_id: parent.candidate_id,
            example_ids: example_ids.clone(),
            scores: if config.track_stats { parent_scores.clone() } else { Vec::new() },
        });
        let cache = train_cache.entry(parent.candidate_id).or_default();
        for (slot, &train_index) in minibatch.iter().enumerate() {
            cache.insert(train_index, parent_scores[slot]);
        }
        let parent_mb_mean = mean(&parent_scores);

        let minibatch_results: Vec<(Record, ChatExchange, MetricOutcome)> = parent_runs
            .iter()
            .map(|run| {
                (
                    minibatch_records[run.record_index].clone(),
                    run.exchange.clone(),
                    run.outcome.clone(),
                )
            })
            .collect();
        let (reflection_system, reflection_user) =
            build_reflection_request(&parent, &minibatch_results);
        let reflection = step!(complete(
            reflector.backend,
            &reflector.settings,
            &reflection_system,
            &reflection_user,
            log,
        ));
        let proposed = reflection.response_text.trim().to_string();
        trace.events.push(TraceEvent::ReflectionCall {
            parent_id: parent.candidate_id,
            proposed_harness: proposed.clone(),
        });

        let proposal_id = next_candidate_id;
        next_candidate_id += 1;

        if proposed.is_empty() || proposed == parent.harness_text.trim() {
            let reason = if proposed.is_empty() {
                "reflector returned an empty harness".to_string()
            } else {
                "proposal is identical to the parent harness".to_string()
            };
            trace.events.push(TraceEvent::Acceptance {
                candidate_id: proposal_id,
                interface_fingerprint: parent_contract.interface_fingerprint().to_string(),
                accepted: false,
                reason,
            });
            consecutive_rejections += 1;
            continue;
        }

        // Fixed layers pass through untouched; only the harness changes.
        let proposal_contract = parent_contract
            .with_harness(&proposed)
            .expect("non-empty proposal text");
        let proposal_runs = step!(run_student_batch(
            &proposal_contract,
            &student.settings,
            student.backend,
            &minibatch_records,
            policy,
            metric,
            config.num_threads,
            log,
        ));
        let proposal_scores: Vec<f64> = proposal_runs.iter().map(|r| r.outcome.score).collect();
        trace.events.push(TraceEvent::MinibatchEval {
            candidate_id: proposal_id,
            example_ids: example_ids.clone(),
            scores: if config.track_stats { proposal_scores.clone() } else { Vec::new() },
        });
        let proposal_mb_mean = mean(&proposal_scores);

        if proposal_mb_mean > parent_mb_mean {
            trace.events.push(TraceEvent::Acceptance {
                candidate_id: proposal_id,
                interface_fingerprint: proposal_contract.interface_fingerprint().to_string(),
                accepted: true,
                reason: format!(
                    "minibatch mean improved {parent_mb_mean} -> {proposal_mb_mean}"
                ),
            });
            let (scores, rows) = step!(full_eval(&proposal_contract, proposal_id, &mut trace));
            let mut cache = BTreeMap::new();
            for (slot, &train_index) in minibatch.iter().enumerate() {
                cache.insert(train_index, proposal_scores[slot]);
            }
            train_cache.insert(proposal_id, cache);
            pool.push(Candidate {
                candidate_id: proposal_id,
                harness_text: proposed,
                parent_id: Some(parent.candidate_id),
                val_scores: scores.clone(),
                mean_val_score: mean(&scores),
                origin: CandidateOrigin::Reflection,
            });
            contracts.insert(proposal_id, proposal_contract);
            val_predictions.insert(proposal_id, rows);
            consecutive_rejections = 0;
        } else {
            trace.events.push(TraceEvent::Acceptance {
                candidate_id: proposal_id,
                interface_fingerprint: proposal_contract.interface_fingerprint().to_string(),
                accepted: false,
                reason: format!(
                    "minibatch mean {proposal_mb_mean} did not exceed parent {parent_mb_mean}"
                ),
            });
            consecutive_rejections += 1;
        }
    }

    // Winner: maximal mean validation score, ties to the lowest id.
    let winner = pool
        .iter()
        .max_by(|a, b| {
            a.mean_val_score
                .partial_cmp(&b.mean_val_score)
                .expect("finite scores")
                .then(b.candidate_id.cmp(&a.candidate_id))
        })
        .expect("pool holds at least the baseline")
        .clone();
    let winner_contract = contracts[&winner.candidate_id].clone();
    trace.candidates = pool;

    Ok(CompileOutcome {
        program: CompiledProgram::new(winner_contract, student.settings.clone()),
        trace,
        winner_id: winner.candidate_id,
        val_predictions,
    })
}
