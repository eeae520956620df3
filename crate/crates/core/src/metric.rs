//! Executable calibration metrics for binary screening.
//!
//! Two metrics share the same asymmetric label scoring — full credit for a
//! correct decision, nothing for a false exclusion, partial credit for a
//! false inclusion — and differ in how strictly they validate the `checks`
//! audit trace and how much context their feedback carries:
//!
//! * [`compact_metric`] validates checks with a bare word-count threshold and
//!   returns short feedback.
//! * [`expanded_metric`] validates checks as 2–5 bounded bullet lines and
//!   grounds its feedback in the failing case (criteria/title/abstract,
//!   truncated).
//!
//! Both always return a score *and* feedback; callers that only need the
//! scalar read [`MetricOutcome::score`].

use serde::{Deserialize, Serialize};

use crate::dataset::{Record, normalize_label};
use crate::evaluation::ConfusionMatrix;

/// The two decision tokens the screening metrics understand.
pub const VALID_LABELS: [&str; 2] = ["include", "exclude"];

/// Errors raised by the metrics. These indicate caller bugs (bad gold labels,
/// inconsistent policy), never model failures — model failures are scored.
#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("gold label '{0}' is not a valid decision token")]
    InvalidGoldLabel(String),
    #[error("invalid scoring policy: {0}")]
    InvalidPolicy(String),
    #[error("confusion matrix is empty (N = 0)")]
    EmptyConfusionMatrix,
}

/// Policy constants of the screening utility.
///
/// `fp_score` is a policy parameter, not a universal screening constant; the
/// shipped default of 0.4 treats a false inclusion as clearly inferior to a
/// correct decision while keeping it distinct from a false exclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringPolicy {
    #[serde(default = "default_correct")]
    pub correct_score: f64,
    #[serde(default)]
    pub false_negative_score: f64,
    #[serde(rename = "fp_score", default = "default_fp")]
    pub false_positive_score: f64,
    #[serde(default = "default_cap")]
    pub checks_cap: f64,
    #[serde(default = "default_positive")]
    pub positive_label: String,
}

fn default_correct() -> f64 {
    1.0
}
fn default_fp() -> f64 {
    0.4
}
fn default_cap() -> f64 {
    0.6
}
fn default_positive() -> String {
    "include".to_string()
}

impl Default for ScoringPolicy {
    fn default() -> Self {
        Self {
            correct_score: default_correct(),
            false_negative_score: 0.0,
            false_positive_score: default_fp(),
            checks_cap: default_cap(),
            positive_label: default_positive(),
        }
    }
}

impl ScoringPolicy {
    /// Check the ordinal contract of the policy constants.
    pub fn validate(&self) -> Result<(), MetricError> {
        let ordered = 0.0 <= self.false_negative_score
            && self.false_negative_score <= self.false_positive_score
            && self.false_positive_score <= self.correct_score
            && self.correct_score <= 1.0;
        if !ordered {
            return Err(MetricError::InvalidPolicy(
                "scores must satisfy 0 <= false_negative <= fp_score <= correct <= 1".to_string(),
            ));
        }
        if !(self.checks_cap > 0.0 && self.checks_cap < self.correct_score) {
            return Err(MetricError::InvalidPolicy(
                "checks_cap must lie strictly between 0 and correct_score".to_string(),
            ));
        }
        if !VALID_LABELS.contains(&self.positive_label.as_str()) {
            return Err(MetricError::InvalidPolicy(format!(
                "positive_label '{}' is not a valid decision token",
                self.positive_label
            )));
        }
        Ok(())
    }

    /// The decision token that is not the positive label.
    pub fn negative_label(&self) -> &'static str {
        if self.positive_label == "include" {
            "exclude"
        } else {
            "include"
        }
    }
}

/// Score plus natural-language feedback. Feedback is never empty, including
/// the correct case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub score: f64,
    pub feedback: String,
}

/// A parsed model response. `label_raw` may be arbitrary text; normalization
/// happens inside the metrics so parse failures are scored, not thrown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label_raw: String,
    pub checks: String,
    pub parse_ok: bool,
}

impl Prediction {
    pub fn new(label_raw: &str, checks: &str) -> Self {
        Self {
            label_raw: label_raw.to_string(),
            checks: checks.to_string(),
            parse_ok: true,
        }
    }
}

/// Which of the two shipped metrics a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Compact,
    Expanded,
}

impl MetricKind {
    pub fn evaluate(
        &self,
        gold: &Record,
        pred: &Prediction,
        policy: &ScoringPolicy,
    ) -> Result<MetricOutcome, MetricError> {
        match self {
            MetricKind::Compact => compact_metric(&gold.gold_label, pred, policy),
            MetricKind::Expanded => expanded_metric(gold, pred, policy),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Compact => "compact",
            MetricKind::Expanded => "expanded",
        }
    }
}

/// Minimal audit-trace check: the checks text carries at least three words
/// (which also rules out empty or blank text).
pub fn has_supporting_checks(pred: &Prediction) -> bool {
    pred.checks.split_whitespace().count() >= 3
}

/// Strict audit-trace check: 2–5 non-blank lines, each at most 8 words after
/// stripping leading `-`, `*`, and spaces, at most 30 words in total.
pub fn checks_format_ok(checks: &str) -> bool {
    let checks = checks.trim();
    if checks.is_empty() {
        return false;
    }
    let lines: Vec<&str> = checks
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if !(2..=5).contains(&lines.len()) {
        return false;
    }
    let mut total_words = 0;
    for line in lines {
        let words = line
            .trim_start_matches(['-', '*', ' '])
            .split_whitespace()
            .count();
        if words > 8 {
            return false;
        }
        total_words += words;
    }
    total_words <= 30
}

/// The asymmetric screening metric with short feedback.
///
/// An invalid predicted label scores 0.0; a correct label scores
/// `correct_score`; a false negative scores `false_negative_score`; a false
/// positive scores `fp_score`. When the prediction lacks supporting checks
/// the score is capped at `checks_cap` and the feedback asks for them.
pub fn compact_metric(
    gold_label: &str,
    pred: &Prediction,
    policy: &ScoringPolicy,
) -> Result<MetricOutcome, MetricError> {
    policy.validate()?;
    let gold = normalize_label(gold_label);
    if !VALID_LABELS.contains(&gold.as_str()) {
        return Err(MetricError::InvalidGoldLabel(gold_label.to_string()));
    }

    let observed = pred.label_raw.trim().to_lowercase();
    let (mut score, mut feedback) = if !VALID_LABELS.contains(&observed.as_str()) {
        (
            0.0,
            "The label must be exactly 'include' or 'exclude'.".to_string(),
        )
    } else if observed == gold {
        (
            policy.correct_score,
            "Correct screening decision.".to_string(),
        )
    } else if gold == policy.positive_label {
        (
            policy.false_negative_score,
            "False negative. Missing relevant studies is costly in screening.".to_string(),
        )
    } else {
        (
            policy.false_positive_score,
            "False positive. Include only when criteria are clearly satisfied.".to_string(),
        )
    };

    if !has_supporting_checks(pred) {
        score = score.min(policy.checks_cap);
        feedback.push_str(" Also provide brief checks that justify the label.");
    }
    Ok(MetricOutcome { score, feedback })
}

/// The output-format block embedded in every expanded-metric feedback.
pub const OUTPUT_CONTRACT: &str = "Return outputs using the field markers exactly:\n\
[[ ## checks ## ]]\n\
(2-5 bullet fragments, each <= 8 words, max 30 words total)\n\
[[ ## label ## ]]\n\
(exactly one token: include or exclude)\n\
[[ ## completed ## ]]\n\
Do not add other text.\n";

const CRITERIA_EXCERPT_CHARS: usize = 800;
const TITLE_EXCERPT_CHARS: usize = 300;
const ABSTRACT_EXCERPT_CHARS: usize = 1200;

/// The asymmetric screening metric with case-grounded feedback.
///
/// Label scoring matches [`compact_metric`] but `normalize_label` is applied
/// to both the gold and the predicted label. Every non-correct outcome embeds
/// the output contract and a case block (criteria, title, abstract truncated
/// by character count). Checks are validated with [`checks_format_ok`]; the
/// cap applies only when the score is positive.
pub fn expanded_metric(
    gold: &Record,
    pred: &Prediction,
    policy: &ScoringPolicy,
) -> Result<MetricOutcome, MetricError> {
    policy.validate()?;
    let gold_lab = normalize_label(&gold.gold_label);
    if !VALID_LABELS.contains(&gold_lab.as_str()) {
        return Err(MetricError::InvalidGoldLabel(gold.gold_label.clone()));
    }
    let pred_lab = normalize_label(&pred.label_raw);
    let checks = pred.checks.trim();

    let case = format!(
        "\n\nCASE\nCRITERIA:\n{}\n\nTITLE:\n{}\n\nABSTRACT:\n{}\n",
        truncate_chars(&gold.criteria, CRITERIA_EXCERPT_CHARS),
        truncate_chars(&gold.title, TITLE_EXCERPT_CHARS),
        truncate_chars(&gold.abstract_text, ABSTRACT_EXCERPT_CHARS),
    );

    let (mut score, mut feedback) = if !VALID_LABELS.contains(&pred_lab.as_str()) {
        (
            0.0,
            format!(
                "Invalid label '{pred_lab}'. Label must be exactly one of: include or exclude.\n{OUTPUT_CONTRACT}{case}"
            ),
        )
    } else if pred_lab == gold_lab {
        (policy.correct_score, format!("Correct.\n{OUTPUT_CONTRACT}"))
    } else if gold_lab == policy.positive_label {
        (
            policy.false_negative_score,
            format!(
                "False negative. Prefer INCLUDE when uncertain to avoid missing relevant studies. \
                 Identify which criteria clause supports inclusion.\n{OUTPUT_CONTRACT}{case}"
            ),
        )
    } else {
        (
            policy.false_positive_score,
            format!(
                "False positive. Only INCLUDE when the criteria are clearly satisfied. \
                 Identify which clause was over-applied.\n{OUTPUT_CONTRACT}{case}"
            ),
        )
    };

    if !checks_format_ok(checks) {
        if score > 0.0 {
            score = score.min(policy.checks_cap);
        }
        feedback = format!("checks format invalid or missing.\n{OUTPUT_CONTRACT}{feedback}");
    }
    Ok(MetricOutcome { score, feedback })
}

/// Label-level asymmetric utility: `(TP + TN + fp_score * FP) / N`.
///
/// Nondecreasing in `fp_score`; collapses to accuracy at `fp_score = 0`.
pub fn utility_from_confusion(cm: &ConfusionMatrix, fp_score: f64) -> Result<f64, MetricError> {
    let n = cm.total();
    if n == 0 {
        return Err(MetricError::EmptyConfusionMatrix);
    }
    Ok(
        (cm.true_positives as f64 + cm.true_negatives as f64 + fp_score * cm.false_positives as f64)
            / n as f64,
    )
}

/// Truncate by character count (code points) on the already-normalized text.
fn truncate_chars(text: &str, limit: usize) -> String {
    text.chars().take(limit).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn good_checks() -> &'static str {
        "defect prediction with ML evaluation"
    }

    fn record(gold: &str) -> Record {
        Record {
            record_id: "r1".to_string(),
            title: "A defect prediction study".to_string(),
            abstract_text: "We evaluate machine learning models.".to_string(),
            criteria: "include ML defect prediction".to_string(),
            gold_label: gold.to_string(),
        }
    }

    #[test]
    fn compact_scores_match_the_asymmetric_table() {
        let policy = ScoringPolicy::default();
        let cases = [
            ("include", "include", 1.0),
            ("exclude", "exclude", 1.0),
            ("include", "exclude", 0.0),
            ("exclude", "include", 0.4),
        ];
        for (gold, observed, expected) in cases {
            let outcome =
                compact_metric(gold, &Prediction::new(observed, good_checks()), &policy).unwrap();
            assert_eq!(outcome.score, expected, "{gold}/{observed}");
            assert!(!outcome.feedback.is_empty());
        }
    }

    #[test]
    fn compact_feedback_texts_are_exact() {
        let policy = ScoringPolicy::default();
        let fb = |gold: &str, observed: &str| {
            compact_metric(gold, &Prediction::new(observed, good_checks()), &policy)
                .unwrap()
                .feedback
        };
        assert_eq!(fb("include", "include"), "Correct screening decision.");
        assert_eq!(
            fb("include", "exclude"),
            "False negative. Missing relevant studies is costly in screening."
        );
        assert_eq!(
            fb("exclude", "include"),
            "False positive. Include only when criteria are clearly satisfied."
        );
        assert_eq!(
            fb("include", "maybe"),
            "The label must be exactly 'include' or 'exclude'."
        );
    }

    #[test]
    fn missing_checks_cap_applies() {
        let policy = ScoringPolicy::default();
        let outcome =
            compact_metric("exclude", &Prediction::new("exclude", "ok"), &policy).unwrap();
        assert_eq!(outcome.score, 0.6);
        assert!(outcome.feedback.ends_with("Also provide brief checks that justify the label."));

        // A false negative stays at 0.0; the cap never raises a score.
        let fn_outcome =
            compact_metric("include", &Prediction::new("exclude", ""), &policy).unwrap();
        assert_eq!(fn_outcome.score, 0.0);
    }

    #[test]
    fn invalid_predicted_label_scores_zero() {
        let policy = ScoringPolicy::default();
        let outcome =
            compact_metric("include", &Prediction::new("maybe", good_checks()), &policy).unwrap();
        assert_eq!(outcome.score, 0.0);
        assert!(outcome.feedback.contains("must be exactly"));
    }

    #[test]
    fn invalid_gold_label_is_a_caller_error() {
        let policy = ScoringPolicy::default();
        let err =
            compact_metric("borderline", &Prediction::new("include", good_checks()), &policy)
                .unwrap_err();
        assert!(matches!(err, MetricError::InvalidGoldLabel(_)));
    }

    #[test]
    fn compact_score_membership_under_defaults() {
        let policy = ScoringPolicy::default();
        let allowed = [0.0, 0.4, 0.6, 1.0];
        for gold in ["include", "exclude"] {
            for observed in ["include", "exclude", "maybe", "", "Included"] {
                for checks in ["", "yes", "a b c", good_checks()] {
                    let outcome =
                        compact_metric(gold, &Prediction::new(observed, checks), &policy).unwrap();
                    assert!(
                        allowed.contains(&outcome.score),
                        "unexpected score {} for {gold}/{observed}/{checks:?}",
                        outcome.score
                    );
                }
            }
        }
    }

    #[test]
    fn supporting_checks_threshold_is_three_words() {
        assert!(has_supporting_checks(&Prediction::new("include", "relevant defect study")));
        assert!(!has_supporting_checks(&Prediction::new("include", "yes")));
        assert!(has_supporting_checks(&Prediction::new("include", "a b c")));
        assert!(!has_supporting_checks(&Prediction::new("include", "  ")));
    }

    #[test]
    fn checks_format_rules() {
        assert!(checks_format_ok("- ML defect prediction\n- empirical evaluation reported"));
        assert!(!checks_format_ok(""));
        assert!(!checks_format_ok("single line of text"));
        // Six lines fail the line-count rule even though words are in bounds.
        assert!(!checks_format_ok("a b c d e\nf g h i j\nk l m n o\np q r s t\nu v w x y\nz a b c d"));
        // A nine-word line fails the per-line rule.
        assert!(!checks_format_ok("- one two three four five six seven eight nine\n- ok line"));
        // 31 words across five lines fail the total-word rule.
        assert!(!checks_format_ok(
            "a b c d e f g\na b c d e f g\na b c d e f g\na b c d e f g\na b c"
        ));
        // 30 words exactly passes.
        assert!(checks_format_ok(
            "a b c d e f\na b c d e f\na b c d e f\na b c d e f\na b c d e f"
        ));
        // Bullet prefixes are stripped before counting.
        assert!(checks_format_ok("-- one two three four five six seven eight\n* short line"));
        // Blank interior lines are ignored.
        assert!(checks_format_ok("- first fragment\n\n- second fragment"));
    }

    #[test]
    fn expanded_false_negative_embeds_contract_and_case() {
        let policy = ScoringPolicy::default();
        let gold = record("include");
        let outcome =
            expanded_metric(&gold, &Prediction::new("exclude", "- relevant study\n- uses ML"), &policy)
                .unwrap();
        assert_eq!(outcome.score, 0.0);
        assert!(outcome.feedback.starts_with("False negative."));
        assert!(outcome.feedback.contains("Prefer INCLUDE when uncertain"));
        assert!(outcome.feedback.contains("(2-5 bullet fragments, each <= 8 words, max 30 words total)"));
        assert!(outcome.feedback.contains("\n\nCASE\nCRITERIA:\n"));
        assert!(outcome.feedback.contains(&gold.title));
    }

    #[test]
    fn expanded_truncates_case_text_by_chars() {
        let policy = ScoringPolicy::default();
        let mut gold = record("include");
        gold.abstract_text = "x".repeat(2000);
        gold.criteria = "c".repeat(900);
        gold.title = "t".repeat(400);
        let outcome =
            expanded_metric(&gold, &Prediction::new("exclude", "- a b\n- c d"), &policy).unwrap();
        assert!(outcome.feedback.contains(&"x".repeat(1200)));
        assert!(!outcome.feedback.contains(&"x".repeat(1201)));
        assert!(outcome.feedback.contains(&"c".repeat(800)));
        assert!(!outcome.feedback.contains(&"c".repeat(801)));
        assert!(outcome.feedback.contains(&"t".repeat(300)));
        assert!(!outcome.feedback.contains(&"t".repeat(301)));
    }

    #[test]
    fn expanded_checks_cap_only_lowers_positive_scores() {
        let policy = ScoringPolicy::default();
        let gold = record("exclude");
        let outcome = expanded_metric(&gold, &Prediction::new("exclude", "ok"), &policy).unwrap();
        assert_eq!(outcome.score, 0.6);
        assert!(outcome.feedback.starts_with("checks format invalid or missing.\n"));

        // Invalid label plus bad checks stays at zero.
        let zero = expanded_metric(&record("include"), &Prediction::new("maybe", ""), &policy).unwrap();
        assert_eq!(zero.score, 0.0);
        assert!(zero.feedback.starts_with("checks format invalid or missing.\n"));
        assert!(zero.feedback.contains("Invalid label 'maybe'"));
    }

    #[test]
    fn expanded_normalizes_both_labels() {
        let policy = ScoringPolicy::default();
        let mut gold = record("include");
        gold.gold_label = "Included".to_string();
        let outcome =
            expanded_metric(&gold, &Prediction::new(" INCLUDED ", "- a b\n- c d"), &policy).unwrap();
        assert_eq!(outcome.score, 1.0);
        assert_eq!(outcome.feedback, format!("Correct.\n{OUTPUT_CONTRACT}"));
    }

    #[test]
    fn utility_reproduces_reconstructed_baseline() {
        let cm = ConfusionMatrix::from_counts(599, 158, 250, 69);
        let utility = utility_from_confusion(&cm, 0.4).unwrap();
        assert!((utility - 0.848).abs() < 5e-4);
        // Paper-reported mean for the same condition.
        assert!((utility - 0.847).abs() < 1e-3);
        assert!((utility_from_confusion(&cm, 0.2).unwrap() - 0.818).abs() < 5e-4);
        assert!((utility_from_confusion(&cm, 0.6).unwrap() - 0.877).abs() < 5e-4);
    }

    #[test]
    fn utility_edges() {
        let perfect = ConfusionMatrix::from_counts(10, 0, 10, 0);
        for fp_score in [0.0, 0.3, 0.7, 1.0] {
            assert_eq!(utility_from_confusion(&perfect, fp_score).unwrap(), 1.0);
        }
        let empty = ConfusionMatrix::from_counts(0, 0, 0, 0);
        assert!(matches!(
            utility_from_confusion(&empty, 0.4),
            Err(MetricError::EmptyConfusionMatrix)
        ));
    }

    #[test]
    fn utility_is_monotone_in_fp_score() {
        let cm = ConfusionMatrix::from_counts(5, 3, 4, 2);
        let mut last = f64::NEG_INFINITY;
        for i in 0..=10 {
            let u = utility_from_confusion(&cm, i as f64 / 10.0).unwrap();
            assert!(u > last, "strictly increasing when FP > 0");
            last = u;
        }
    }

    #[test]
    fn policy_validation_rejects_broken_orderings() {
        let p = ScoringPolicy { false_positive_score: 1.5, ..ScoringPolicy::default() };
        assert!(p.validate().is_err());
        let p = ScoringPolicy { checks_cap: 0.0, ..ScoringPolicy::default() };
        assert!(p.validate().is_err());
        let p = ScoringPolicy { positive_label: "maybe".to_string(), ..ScoringPolicy::default() };
        assert!(p.validate().is_err());
        assert!(ScoringPolicy::default().validate().is_ok());
    }

    proptest::proptest! {
        // Score membership, cap correctness, and feedback totality over
        // arbitrary predictions.
        #[test]
        fn compact_metric_invariants(
            gold in "(include|exclude)",
            label in "\\PC{0,12}",
            checks in "[a-z \\n*-]{0,48}",
        ) {
            use proptest::prelude::*;
            let policy = ScoringPolicy::default();
            let prediction = Prediction::new(&label, &checks);
            let outcome = compact_metric(&gold, &prediction, &policy).unwrap();
            prop_assert!([0.0, 0.4, 0.6, 1.0].contains(&outcome.score));
            prop_assert!(!outcome.feedback.is_empty());
            if !has_supporting_checks(&prediction) {
                prop_assert!(outcome.score <= policy.checks_cap);
            }

            let expanded_gold = Record {
                record_id: "r".to_string(),
                title: "t".to_string(),
                abstract_text: "a".to_string(),
                criteria: "c".to_string(),
                gold_label: gold.clone(),
            };
            let expanded = expanded_metric(&expanded_gold, &prediction, &policy).unwrap();
            prop_assert!((0.0..=1.0).contains(&expanded.score));
            prop_assert!(!expanded.feedback.is_empty());
            if !checks_format_ok(&checks) && expanded.score > 0.0 {
                prop_assert!(expanded.score <= policy.checks_cap);
            }
        }
    }

    #[test]
    fn policy_defaults_deserialize_from_sparse_config() {
        let p: ScoringPolicy = serde_json::from_str(r#"{"fp_score": 0.2}"#).unwrap();
        assert_eq!(p.false_positive_score, 0.2);
        assert_eq!(p.checks_cap, 0.6);
        assert_eq!(p.positive_label, "include");
        let p: ScoringPolicy = serde_json::from_str("{}").unwrap();
        assert_eq!(p, ScoringPolicy::default());
    }
}
