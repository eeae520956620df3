//! The three-layer task contract.
//!
//! A [`TaskContract`] carries the frozen scientific criteria, the frozen
//! machine-readable interface (input and output fields, including the
//! decision field's allowed tokens), and the mutable prompt harness. The
//! harness is the only layer any part of the system may rewrite; the fixed
//! layers are pinned by [`TaskContract::interface_fingerprint`], a canonical
//! SHA-256 digest that deliberately excludes the harness.

use serde::{Deserialize, Serialize};

use crate::digest;

/// Errors raised while constructing, rewriting, or parsing a contract.
#[derive(Debug, thiserror::Error)]
pub enum ContractError {
    #[error("duplicate field name '{0}'")]
    DuplicateFieldName(String),
    #[error("field name '{0}' is empty or contains whitespace")]
    InvalidFieldName(String),
    #[error("field '{field}' declared in the {expected} list but has role {found}")]
    RoleMismatch {
        field: String,
        expected: &'static str,
        found: String,
    },
    #[error("token set on field '{field}' must list at least 2 distinct lowercase tokens")]
    InvalidTokenSet { field: String },
    #[error("criteria text is empty")]
    EmptyCriteria,
    #[error("contract declares no output fields")]
    NoOutputFields,
    #[error("no output field carries a token set; a decision field is required")]
    NoDecisionField,
    #[error("harness text is empty")]
    EmptyHarness,
    #[error("stored interface fingerprint {found} does not match recomputed {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("contract JSON is malformed: {0}")]
    Malformed(#[from] serde_json::Error),
}

/// Whether a field is supplied to the model or returned by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Input,
    Output,
}

impl std::fmt::Display for FieldRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldRole::Input => write!(f, "input"),
            FieldRole::Output => write!(f, "output"),
        }
    }
}

/// Value constraint on a field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldConstraint {
    /// Any text.
    FreeText,
    /// Exactly one token from this set (the decision vocabulary).
    TokenSet(Vec<String>),
}

/// One named field of the machine-readable interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub description: String,
    pub role: FieldRole,
    #[serde(default)]
    pub constraint: Option<FieldConstraint>,
}

impl FieldSpec {
    /// Free-text input field.
    pub fn input(name: &str, description: &str) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            role: FieldRole::Input,
            constraint: None,
        }
    }

    /// Free-text output field.
    pub fn output_text(name: &str, description: &str) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            role: FieldRole::Output,
            constraint: Some(FieldConstraint::FreeText),
        }
    }

    /// Token-constrained output field (a decision field).
    pub fn output_tokens(name: &str, description: &str, tokens: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            role: FieldRole::Output,
            constraint: Some(FieldConstraint::TokenSet(
                tokens.iter().map(|t| t.to_string()).collect(),
            )),
        }
    }
}

/// The fixed layers of a contract, in the exact shape that is fingerprinted.
///
/// The canonical digest of this struct (sorted keys, compact JSON) is the
/// `interface_fingerprint`. It excludes `contract_id` and `harness_text`.
#[derive(Serialize)]
struct FixedLayers<'a> {
    criteria_text: &'a str,
    input_fields: &'a [FieldSpec],
    output_fields: &'a [FieldSpec],
}

/// The three-layer task object.
///
/// Immutable after construction; fields are private so no code path can
/// mutate the fixed layers of an existing contract.
/// [`TaskContract::with_harness`] returns a new contract sharing the id and
/// fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskContract {
    contract_id: String,
    criteria_text: String,
    input_fields: Vec<FieldSpec>,
    output_fields: Vec<FieldSpec>,
    harness_text: String,
    interface_fingerprint: String,
}

impl TaskContract {
    /// Build a contract from its parts and compute the interface fingerprint.
    ///
    /// The contract id is derived from the fingerprint; use
    /// [`TaskContract::with_contract_id`] to assign a human-readable id.
    pub fn new(
        criteria: &str,
        inputs: Vec<FieldSpec>,
        outputs: Vec<FieldSpec>,
        harness: &str,
    ) -> Result<Self, ContractError> {
        if criteria.trim().is_empty() {
            return Err(ContractError::EmptyCriteria);
        }
        if harness.trim().is_empty() {
            return Err(ContractError::EmptyHarness);
        }
        if outputs.is_empty() {
            return Err(ContractError::NoOutputFields);
        }
        validate_fields(&inputs, FieldRole::Input)?;
        validate_fields(&outputs, FieldRole::Output)?;

        let mut seen = std::collections::BTreeSet::new();
        for field in inputs.iter().chain(outputs.iter()) {
            if !seen.insert(field.name.clone()) {
                return Err(ContractError::DuplicateFieldName(field.name.clone()));
            }
        }
        if !outputs
            .iter()
            .any(|f| matches!(f.constraint, Some(FieldConstraint::TokenSet(_))))
        {
            return Err(ContractError::NoDecisionField);
        }

        let fingerprint = fingerprint_fixed_layers(criteria, &inputs, &outputs);
        let contract_id = format!("contract-{}", &fingerprint[..12]);
        Ok(Self {
            contract_id,
            criteria_text: criteria.to_string(),
            input_fields: inputs,
            output_fields: outputs,
            harness_text: harness.to_string(),
            interface_fingerprint: fingerprint,
        })
    }

    /// Same contract under a chosen id. The fingerprint does not cover the
    /// id, so this never invalidates provenance.
    pub fn with_contract_id(mut self, id: &str) -> Self {
        self.contract_id = id.to_string();
        self
    }

    /// A new contract with the same fixed layers and a replacement harness.
    pub fn with_harness(&self, new_harness: &str) -> Result<Self, ContractError> {
        if new_harness.trim().is_empty() {
            return Err(ContractError::EmptyHarness);
        }
        let mut next = self.clone();
        next.harness_text = new_harness.to_string();
        debug_assert_eq!(
            next.interface_fingerprint,
            fingerprint_fixed_layers(&next.criteria_text, &next.input_fields, &next.output_fields),
        );
        Ok(next)
    }

    pub fn contract_id(&self) -> &str {
        &self.contract_id
    }

    /// The frozen scientific criteria block.
    pub fn criteria_text(&self) -> &str {
        &self.criteria_text
    }

    pub fn input_fields(&self) -> &[FieldSpec] {
        &self.input_fields
    }

    pub fn output_fields(&self) -> &[FieldSpec] {
        &self.output_fields
    }

    /// The mutable instructional layer.
    pub fn harness_text(&self) -> &str {
        &self.harness_text
    }

    /// Deterministic digest of (criteria, input fields, output fields);
    /// excludes the harness and the contract id.
    pub fn interface_fingerprint(&self) -> &str {
        &self.interface_fingerprint
    }

    /// The decision field: the first token-set-constrained output field.
    pub fn decision_field(&self) -> &FieldSpec {
        self.output_fields
            .iter()
            .find(|f| matches!(f.constraint, Some(FieldConstraint::TokenSet(_))))
            .expect("contract invariant: at least one token-set output field")
    }

    /// Allowed tokens of the decision field.
    pub fn decision_tokens(&self) -> &[String] {
        match &self.decision_field().constraint {
            Some(FieldConstraint::TokenSet(tokens)) => tokens,
            _ => unreachable!("decision field carries a token set"),
        }
    }

    /// Parse and validate a contract document.
    ///
    /// `interface_fingerprint` may be omitted when authoring by hand; when
    /// present it must match the recomputed digest of the fixed layers.
    /// `contract_id` is likewise optional and defaults to the derived id.
    pub fn from_json_str(text: &str) -> Result<Self, ContractError> {
        #[derive(Deserialize)]
        struct RawContract {
            #[serde(default)]
            contract_id: Option<String>,
            criteria_text: String,
            input_fields: Vec<FieldSpec>,
            output_fields: Vec<FieldSpec>,
            harness_text: String,
            #[serde(default)]
            interface_fingerprint: Option<String>,
        }

        let raw: RawContract = serde_json::from_str(text)?;
        let mut contract = TaskContract::new(
            &raw.criteria_text,
            raw.input_fields,
            raw.output_fields,
            &raw.harness_text,
        )?;
        if let Some(id) = raw.contract_id {
            contract = contract.with_contract_id(&id);
        }
        if let Some(stored) = raw.interface_fingerprint
            && stored != contract.interface_fingerprint
        {
            return Err(ContractError::FingerprintMismatch {
                expected: contract.interface_fingerprint,
                found: stored,
            });
        }
        Ok(contract)
    }

    /// Pretty-printed contract document, field order as declared, trailing
    /// newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("contract serializes");
        s.push('\n');
        s
    }
}

// Deserialization always passes through validation.
impl<'de> Deserialize<'de> for TaskContract {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = serde_json::Value::deserialize(deserializer)?;
        let text = serde_json::to_string(&value).map_err(serde::de::Error::custom)?;
        TaskContract::from_json_str(&text).map_err(serde::de::Error::custom)
    }
}

fn validate_fields(fields: &[FieldSpec], expected: FieldRole) -> Result<(), ContractError> {
    for field in fields {
        if field.name.is_empty() || field.name.chars().any(char::is_whitespace) {
            return Err(ContractError::InvalidFieldName(field.name.clone()));
        }
        if field.role != expected {
            return Err(ContractError::RoleMismatch {
                field: field.name.clone(),
                expected: match expected {
                    FieldRole::Input => "input",
                    FieldRole::Output => "output",
                },
                found: field.role.to_string(),
            });
        }
        if let Some(FieldConstraint::TokenSet(tokens)) = &field.constraint {
            let distinct: std::collections::BTreeSet<&String> = tokens.iter().collect();
            let all_lowercase_words = tokens
                .iter()
                .all(|t| !t.is_empty() && *t == t.to_lowercase() && !t.chars().any(char::is_whitespace));
            if tokens.len() < 2 || distinct.len() != tokens.len() || !all_lowercase_words {
                return Err(ContractError::InvalidTokenSet {
                    field: field.name.clone(),
                });
            }
        }
    }
    Ok(())
}

fn fingerprint_fixed_layers(
    criteria: &str,
    inputs: &[FieldSpec],
    outputs: &[FieldSpec],
) -> String {
    digest::canonical_digest(&FixedLayers {
        criteria_text: criteria,
        input_fields: inputs,
        output_fields: outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn screening_contract() -> TaskContract {
        TaskContract::new(
            "include empirical defect prediction studies",
            vec![
                FieldSpec::input("criteria", "Inclusion and exclusion criteria."),
                FieldSpec::input("title", "Paper title."),
                FieldSpec::input("abstract", "Paper abstract."),
            ],
            vec![
                FieldSpec::output_text("checks", "Short fragments supporting the decision."),
                FieldSpec::output_tokens(
                    "label",
                    "Exactly one token: include or exclude.",
                    &["include", "exclude"],
                ),
            ],
            "Screen titles and abstracts.",
        )
        .unwrap()
    }

    #[test]
    fn screening_contract_is_valid() {
        let c = screening_contract();
        assert_eq!(c.decision_field().name, "label");
        assert_eq!(c.decision_tokens(), ["include", "exclude"]);
        assert_eq!(c.interface_fingerprint.len(), 64);
        assert!(c.contract_id.starts_with("contract-"));
    }

    #[test]
    fn zero_output_fields_rejected() {
        let err = TaskContract::new(
            "criteria",
            vec![FieldSpec::input("title", "t")],
            vec![],
            "harness",
        )
        .unwrap_err();
        assert!(matches!(err, ContractError::NoOutputFields));
    }

    #[test]
    fn no_token_set_output_rejected() {
        let err = TaskContract::new(
            "criteria",
            vec![FieldSpec::input("title", "t")],
            vec![FieldSpec::output_text("checks", "c")],
            "harness",
        )
        .unwrap_err();
        assert!(matches!(err, ContractError::NoDecisionField));
    }

    #[test]
    fn duplicate_field_name_rejected() {
        let err = TaskContract::new(
            "criteria",
            vec![FieldSpec::input("label", "t")],
            vec![FieldSpec::output_tokens("label", "l", &["include", "exclude"])],
            "harness",
        )
        .unwrap_err();
        assert!(matches!(err, ContractError::DuplicateFieldName(name) if name == "label"));
    }

    #[test]
    fn empty_criteria_rejected() {
        let err = TaskContract::new(
            "   ",
            vec![FieldSpec::input("title", "t")],
            vec![FieldSpec::output_tokens("label", "l", &["include", "exclude"])],
            "harness",
        )
        .unwrap_err();
        assert!(matches!(err, ContractError::EmptyCriteria));
    }

    #[test]
    fn whitespace_in_field_name_rejected() {
        let err = TaskContract::new(
            "criteria",
            vec![FieldSpec::input("the title", "t")],
            vec![FieldSpec::output_tokens("label", "l", &["include", "exclude"])],
            "harness",
        )
        .unwrap_err();
        assert!(matches!(err, ContractError::InvalidFieldName(_)));
    }

    #[test]
    fn short_or_uppercase_token_sets_rejected() {
        for tokens in [vec!["include"], vec!["include", "include"], vec!["Include", "exclude"]] {
            let err = TaskContract::new(
                "criteria",
                vec![FieldSpec::input("title", "t")],
                vec![FieldSpec::output_tokens("label", "l", &tokens)],
                "harness",
            )
            .unwrap_err();
            assert!(matches!(err, ContractError::InvalidTokenSet { .. }), "{tokens:?}");
        }
    }

    #[test]
    fn harness_rewrite_preserves_fingerprint_and_original() {
        let c = screening_contract();
        let rewritten = c.with_harness("A far more detailed harness.").unwrap();
        assert_eq!(rewritten.interface_fingerprint, c.interface_fingerprint);
        assert_eq!(rewritten.contract_id, c.contract_id);
        assert_eq!(rewritten.harness_text, "A far more detailed harness.");
        assert_eq!(c.harness_text, "Screen titles and abstracts.");
    }

    #[test]
    fn identity_rewrite_equals_original() {
        let c = screening_contract();
        let same = c.with_harness(&c.harness_text).unwrap();
        assert_eq!(same, c);
    }

    #[test]
    fn fingerprint_constant_across_hundred_rewrites() {
        let mut c = screening_contract();
        let mut fingerprints = std::collections::BTreeSet::new();
        fingerprints.insert(c.interface_fingerprint.clone());
        for i in 0..100 {
            c = c.with_harness(&format!("harness revision {i}")).unwrap();
            fingerprints.insert(c.interface_fingerprint.clone());
        }
        assert_eq!(fingerprints.len(), 1);
    }

    #[test]
    fn empty_harness_rewrite_rejected() {
        let c = screening_contract();
        assert!(matches!(c.with_harness(" \n "), Err(ContractError::EmptyHarness)));
    }

    // Reference-digest oracle: the fingerprint must equal the SHA-256 of the
    // canonical fixed-layer JSON, built here by hand and hashed directly.
    #[test]
    fn fingerprint_matches_reference_digest() {
        let c = TaskContract::new(
            "keep it",
            vec![FieldSpec::input("title", "Paper title.")],
            vec![FieldSpec::output_tokens("label", "The decision.", &["include", "exclude"])],
            "harness one",
        )
        .unwrap();
        let expected_canonical = concat!(
            r#"{"criteria_text":"keep it","#,
            r#""input_fields":[{"constraint":null,"description":"Paper title.","name":"title","role":"input"}],"#,
            r#""output_fields":[{"constraint":{"token_set":["include","exclude"]},"#,
            r#""description":"The decision.","name":"label","role":"output"}]}"#
        );
        let mut hasher = Sha256::new();
        hasher.update(expected_canonical.as_bytes());
        let reference: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(c.interface_fingerprint, reference);

        let other = TaskContract::new(
            "keep it",
            vec![FieldSpec::input("title", "Paper title.")],
            vec![FieldSpec::output_tokens("label", "The decision.", &["include", "exclude"])],
            "harness two, entirely different",
        )
        .unwrap();
        assert_eq!(other.interface_fingerprint, reference);
    }

    #[test]
    fn serde_round_trip_preserves_every_field() {
        let c = screening_contract().with_contract_id("abstract-screening");
        let text = c.to_json_string();
        let back = TaskContract::from_json_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn stored_fingerprint_is_verified_on_parse() {
        let c = screening_contract();
        let mut value: serde_json::Value = serde_json::from_str(&c.to_json_string()).unwrap();
        value["interface_fingerprint"] = serde_json::Value::String("0".repeat(64));
        let err = TaskContract::from_json_str(&value.to_string()).unwrap_err();
        assert!(matches!(err, ContractError::FingerprintMismatch { .. }));
    }

    #[test]
    fn missing_fingerprint_and_id_are_derived() {
        let text = r#"{
            "criteria_text": "keep empirical studies",
            "input_fields": [{"name": "title", "description": "t", "role": "input"}],
            "output_fields": [
                {"name": "label", "description": "l", "role": "output",
                 "constraint": {"token_set": ["include", "exclude"]}}
            ],
            "harness_text": "screen the records"
        }"#;
        let c = TaskContract::from_json_str(text).unwrap();
        assert!(c.contract_id.starts_with("contract-"));
        assert_eq!(c.interface_fingerprint.len(), 64);
    }
}
