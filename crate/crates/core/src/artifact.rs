//! Compiled-program persistence with full provenance.
//!
//! Persistence is state-only: the contract (with its compiled harness), the
//! student generation settings, and a schema version. No executable object is
//! pickled; a fresh program is reconstructed on load. Artifact files are
//! written canonically (schema version first, remaining keys sorted, compact
//! separators, trailing newline) so equal programs always produce byte-equal
//! files, and every bundle member is digest-pinned by a manifest.
//!
//! On load the interface fingerprint of the fixed layers is recomputed and
//! compared with the stored value: a tampered harness still loads (the
//! harness is the mutable layer) while tampered criteria or fields raise
//! [`ArtifactError::Integrity`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationSettings, RunLog, TokenUsage};
use crate::contract::{ContractError, TaskContract};
use crate::dataset::Record;
use crate::digest;
use crate::evaluation::{EvalError, evaluate_program};
use crate::metric::{MetricKind, ScoringPolicy};
use crate::optimizer::OptimizerConfig;

/// Current artifact schema version.
pub const FORMAT_VERSION: u32 = 1;

/// Errors raised by artifact persistence and verification.
#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("artifact io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("artifact format error: {0}")]
    Format(String),
    #[error("unsupported artifact format_version {found}, expected {expected}")]
    UnsupportedVersion { expected: u32, found: u32 },
    #[error("artifact integrity violation: {0}")]
    Integrity(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The persisted, reloadable calibration product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledProgram {
    pub format_version: u32,
    pub contract: TaskContract,
    pub student_settings: GenerationSettings,
    /// Reserved for few-shot demonstrations; always empty in this workflow.
    #[serde(default)]
    pub demonstrations: Vec<serde_json::Value>,
}

impl CompiledProgram {
    pub fn new(contract: TaskContract, student_settings: GenerationSettings) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            contract,
            student_settings,
            demonstrations: Vec::new(),
        }
    }
}

/// A value that is either recorded or explicitly marked unavailable. Nothing
/// in a provenance record may be silently absent.
#[derive(Debug, Clone, PartialEq)]
pub enum Recorded<T> {
    Available(T),
    Unavailable,
}

impl<T> Recorded<T> {
    pub fn from_option(value: Option<T>) -> Self {
        match value {
            Some(v) => Recorded::Available(v),
            None => Recorded::Unavailable,
        }
    }

    pub fn as_option(&self) -> Option<&T> {
        match self {
            Recorded::Available(v) => Some(v),
            Recorded::Unavailable => None,
        }
    }
}

impl<T: Serialize> Serialize for Recorded<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Recorded::Available(v) => v.serialize(serializer),
            Recorded::Unavailable => serializer.serialize_str("unavailable"),
        }
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Recorded<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        if value == serde_json::Value::String("unavailable".to_string()) {
            return Ok(Recorded::Unavailable);
        }
        T::deserialize(value)
            .map(Recorded::Available)
            .map_err(serde::de::Error::custom)
    }
}

/// Model identity as recorded in provenance (never credentials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub temperature: f64,
}

/// Seeds in effect for one calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split_seed: i64,
    pub optimizer_seed: i64,
}

/// Execution environment snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentRecord {
    pub tool: String,
    pub tool_version: String,
    pub artifact_format_version: u32,
    pub execution_date: Recorded<String>,
}

impl EnvironmentRecord {
    pub fn current(execution_date: Option<String>) -> Self {
        Self {
            tool: "promptcal".to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            artifact_format_version: FORMAT_VERSION,
            execution_date: Recorded::from_option(execution_date),
        }
    }
}

/// Record ids per split, as persisted in provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Relative paths of the logs that accompany a compiled program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRefs {
    pub trace: String,
    pub exchanges: String,
    pub predictions: Vec<String>,
}

/// Everything needed to interpret and reproduce a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub dataset_fingerprint: String,
    pub split_fingerprint: String,
    pub split_ids: SplitIds,
    pub metric: String,
    pub policy: ScoringPolicy,
    pub optimizer: OptimizerConfig,
    pub student_model: ModelInfo,
    pub reflection_model: ModelInfo,
    pub seeds: Seeds,
    pub environment: EnvironmentRecord,
    pub budget_used: u32,
    pub baseline_harness: String,
    pub token_usage: Recorded<TokenUsage>,
    pub provider_cost: Recorded<f64>,
    pub logs: LogRefs,
}

/// Field names a complete provenance record must carry.
pub const PROVENANCE_FIELDS: [&str; 15] = [
    "dataset_fingerprint",
    "split_fingerprint",
    "split_ids",
    "metric",
    "policy",
    "optimizer",
    "student_model",
    "reflection_model",
    "seeds",
    "environment",
    "budget_used",
    "baseline_harness",
    "token_usage",
    "provider_cost",
    "logs",
];

/// Check a provenance document for completeness; returns the missing field
/// names (empty means complete).
pub fn verify_provenance_fields(document: &serde_json::Value) -> Vec<String> {
    let object = match document.as_object() {
        Some(o) => o,
        None => return PROVENANCE_FIELDS.iter().map(|f| f.to_string()).collect(),
    };
    PROVENANCE_FIELDS
        .iter()
        .filter(|field| !object.contains_key(**field))
        .map(|f| f.to_string())
        .collect()
}

// ---------------------------------------------------------------------------
// Save / load
// ---------------------------------------------------------------------------

/// Canonical artifact bytes: `format_version` first, remaining keys sorted,
/// compact separators, trailing newline.
pub fn canonical_artifact_bytes(program: &CompiledProgram) -> Result<Vec<u8>, ArtifactError> {
    if program.format_version != FORMAT_VERSION {
        return Err(ArtifactError::UnsupportedVersion {
            expected: FORMAT_VERSION,
            found: program.format_version,
        });
    }
    let value = serde_json::to_value(program)
        .map_err(|e| ArtifactError::Format(e.to_string()))?;
    let object = value.as_object().expect("program serializes to an object");
    let mut out = String::from("{");
    out.push_str(&format!(
        "\"format_version\":{}",
        object["format_version"]
    ));
    for (key, field) in object {
        if key == "format_version" {
            continue;
        }
        out.push_str(&format!(",\"{key}\":{}", canonical(field)));
    }
    out.push_str("}\n");
    Ok(out.into_bytes())
}

fn canonical(value: &serde_json::Value) -> String {
    // serde_json::Value objects are BTreeMaps, so plain encoding is sorted.
    serde_json::to_string(value).expect("JSON value encodes")
}

/// Write the program canonically; returns the content digest.
pub fn save_artifact(program: &CompiledProgram, path: &Path) -> Result<String, ArtifactError> {
    let bytes = canonical_artifact_bytes(program)?;
    std::fs::write(path, &bytes).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(digest::sha256_hex(&bytes))
}

/// Reload a program, re-validating the contract and its fingerprint.
pub fn load_artifact(path: &Path) -> Result<CompiledProgram, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ArtifactError::Format(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ArtifactError::Format("missing format_version".to_string()))? as u32;
    if found != FORMAT_VERSION {
        return Err(ArtifactError::UnsupportedVersion {
            expected: FORMAT_VERSION,
            found,
        });
    }
    // Contract deserialization recomputes the fingerprint; a mismatch against
    // the stored value is an integrity violation, not a format problem.
    let program: CompiledProgram = serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        if message.contains("fingerprint") {
            ArtifactError::Integrity(message)
        } else {
            ArtifactError::Format(message)
        }
    })?;
    Ok(program)
}

/// Save, reload, and evaluate both programs on `records`; equivalent iff the
/// ordered (gold, observed) prediction lists match element-wise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTripReport {
    pub equivalent: bool,
    pub records: usize,
    pub first_divergence: Option<usize>,
    pub backend_deterministic: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn roundtrip_check(
    program: &CompiledProgram,
    records: &[Record],
    backend: &dyn Backend,
    reloaded_backend: &dyn Backend,
    policy: &ScoringPolicy,
    metric: MetricKind,
    num_threads: usize,
    save_path: &Path,
) -> Result<RoundTripReport, ArtifactError> {
    save_artifact(program, save_path)?;
    let reloaded = load_artifact(save_path)?;

    let log = RunLog::new();
    let before = evaluate_program(
        &program.contract,
        &program.student_settings,
        backend,
        records,
        policy,
        metric,
        num_threads,
        &log,
    )?;
    let after = evaluate_program(
        &reloaded.contract,
        &reloaded.student_settings,
        reloaded_backend,
        records,
        policy,
        metric,
        num_threads,
        &log,
    )?;

    let pairs_before = before.gold_observed_pairs();
    let pairs_after = after.gold_observed_pairs();
    let first_divergence = pairs_before
        .iter()
        .zip(pairs_after.iter())
        .position(|(a, b)| a != b);
    let backend_deterministic = backend.kind() == crate::backend::BackendKind::ScriptedMock;
    Ok(RoundTripReport {
        equivalent: first_divergence.is_none() && pairs_before.len() == pairs_after.len(),
        records: records.len(),
        first_divergence,
        backend_deterministic,
    })
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

/// One digest-pinned bundle member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMember {
    pub path: String,
    pub sha256: String,
}

/// Manifest of an artifact bundle: every member with its digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub members: Vec<BundleMember>,
}

/// Build and write `manifest.json` for the given members (paths relative to
/// `root`), digesting each member's bytes.
pub fn write_bundle_manifest(root: &Path, members: &[String]) -> Result<BundleManifest, ArtifactError> {
    let mut listed = Vec::with_capacity(members.len());
    let mut sorted = members.to_vec();
    sorted.sort();
    for member in sorted {
        let full = root.join(&member);
        let bytes = std::fs::read(&full).map_err(|source| ArtifactError::Io {
            path: full.clone(),
            source,
        })?;
        listed.push(BundleMember {
            path: member,
            sha256: digest::sha256_hex(&bytes),
        });
    }
    let manifest = BundleManifest { members: listed };
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| ArtifactError::Format(e.to_string()))?;
    text.push('\n');
    let path = root.join("manifest.json");
    std::fs::write(&path, text).map_err(|source| ArtifactError::Io { path, source })?;
    Ok(manifest)
}

/// Verify every member digest of a bundle; returns the mismatching paths.
pub fn verify_bundle(root: &Path) -> Result<Vec<String>, ArtifactError> {
    let path = root.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|source| ArtifactError::Io {
        path: path.clone(),
        source,
    })?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| ArtifactError::Format(e.to_string()))?;
    let mut mismatches = Vec::new();
    for member in &manifest.members {
        let full = root.join(&member.path);
        match std::fs::read(&full) {
            Ok(bytes) if digest::sha256_hex(&bytes) == member.sha256 => {}
            _ => mismatches.push(member.path.clone()),
        }
    }
    Ok(mismatches)
}

impl From<ContractError> for ArtifactError {
    fn from(error: ContractError) -> Self {
        match error {
            ContractError::FingerprintMismatch { expected, found } => ArtifactError::Integrity(
                format!("stored fingerprint {found} does not match recomputed {expected}"),
            ),
            other => ArtifactError::Format(other.to_string()),
        }
    }
}
