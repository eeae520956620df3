//! Run configuration: one JSON file describing a full calibration run.
//!
//! All relative paths resolve against the config file's directory. The whole
//! file is validated before any model call; with an HTTP backend the
//! credential environment variable must exist at startup, and only its name
//! is ever recorded. Example:
//!
//! ```json
//! {
//!   "contract": "contract.json",
//!   "dataset": "records.jsonl",
//!   "split": {"train": 4, "val": 4, "test": 4, "seed": 10},
//!   "policy": {"fp_score": 0.4, "checks_cap": 0.6, "positive_label": "include"},
//!   "metric": "compact",
//!   "optimizer": {"max_full_evals": 2, "reflection_minibatch_size": 2,
//!                  "num_threads": 1, "seed": 10},
//!   "student": {"kind": "mock", "model_id": "mock/student",
//!                "script": "student_script.json", "cycle": true},
//!   "reflection": {"kind": "mock", "model_id": "mock/reflection",
//!                   "script": "reflection_script.json", "cycle": true},
//!   "out": "runs/demo"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationSettings, HttpOpenAiBackend, Role, ScriptedMockBackend};
use crate::dataset::SplitSizes;
use crate::metric::{MetricKind, ScoringPolicy};
use crate::optimizer::OptimizerConfig;

/// Errors raised while loading or validating a run config.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path} is malformed: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("credential environment variable '{0}' is not set")]
    MissingCredential(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Split sizes plus the split seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(flatten)]
    pub sizes: SplitSizes,
    pub seed: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKindChoice {
    Mock,
    Http,
}

/// One model role's transport and identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKindChoice,
    pub model_id: String,
    /// Defaults per role: student 0.0, reflection 1.0.
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Defaults per role: student none, reflection 16000.
    #[serde(default)]
    pub max_tokens: Option<u32>,
    /// Mock only: path to a JSON array of response strings.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Mock only: repeat the script instead of exhausting it.
    #[serde(default)]
    pub cycle: bool,
    /// Http only: base URL of the OpenAI-compatible endpoint.
    #[serde(default)]
    pub base_url: Option<String>,
    /// Http only: name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl BackendSpec {
    fn validate(&self, role: &str) -> Result<(), ConfigError> {
        match self.kind {
            BackendKindChoice::Mock => {
                let script = self.script.as_ref().ok_or_else(|| {
                    ConfigError::Invalid(format!("{role}: mock backend requires a script path"))
                })?;
                if !script.exists() {
                    return Err(ConfigError::MissingFile(script.clone()));
                }
            }
            BackendKindChoice::Http => {
                let var = self.api_key_env.as_ref().ok_or_else(|| {
                    ConfigError::Invalid(format!("{role}: http backend requires api_key_env"))
                })?;
                if std::env::var(var).is_err() {
                    return Err(ConfigError::MissingCredential(var.clone()));
                }
            }
        }
        Ok(())
    }

    /// Instantiate the backend and its generation settings for a role.
    pub fn build(&self, role: Role) -> Result<(Box<dyn Backend>, GenerationSettings), ConfigError> {
        let mut settings = match role {
            Role::Student => GenerationSettings::student(&self.model_id),
            Role::Reflection => GenerationSettings::reflection(&self.model_id),
        };
        if let Some(temperature) = self.temperature {
            settings.temperature = temperature;
        }
        if let Some(max_tokens) = self.max_tokens {
            settings.max_tokens = Some(max_tokens);
        }
        let backend: Box<dyn Backend> = match self.kind {
            BackendKindChoice::Mock => {
                let script = self.script.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("mock backend requires a script path".to_string())
                })?;
                Box::new(
                    ScriptedMockBackend::from_file(script, self.cycle)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                )
            }
            BackendKindChoice::Http => {
                let base_url = self
                    .base_url
                    .clone()
                    .unwrap_or_else(|| "https://api.openai.com/v1".to_string());
                let key = match &self.api_key_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .map_err(|_| ConfigError::MissingCredential(var.clone()))?,
                    ),
                    None => None,
                };
                Box::new(HttpOpenAiBackend::new(&base_url, key))
            }
        };
        Ok((backend, settings))
    }
}

fn default_metric() -> MetricKind {
    MetricKind::Compact
}

/// The complete description of one calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub contract: PathBuf,
    pub dataset: PathBuf,
    pub split: SplitConfig,
    #[serde(default)]
    pub policy: ScoringPolicy,
    #[serde(default = "default_metric")]
    pub metric: MetricKind,
    pub optimizer: OptimizerConfig,
    pub student: BackendSpec,
    pub reflection: BackendSpec,
    pub out: PathBuf,
    /// Recorded in provenance; defaults to today's UTC date. Pin it for
    /// byte-reproducible bundles.
    #[serde(default)]
    pub execution_date: Option<String>,
}

/// Load a config, apply command-line overrides, then validate in full. No
/// model is called.
pub fn load_for_cli(
    path: &Path,
    apply_overrides: impl FnOnce(&mut RunConfig),
) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config: RunConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.resolve_paths(base);
    apply_overrides(&mut config);
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Load, resolve paths, and validate in full. No model is called.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        load_for_cli(path, |_| {})
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.contract);
        resolve(&mut self.dataset);
        resolve(&mut self.out);
        if let Some(script) = &mut self.student.script {
            resolve(script);
        }
        if let Some(script) = &mut self.reflection.script {
            resolve(script);
        }
    }

    /// Full validation at startup: files exist, policy constants are ordered,
    /// optimizer parameters are positive, credentials are present.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.contract.exists() {
            return Err(ConfigError::MissingFile(self.contract.clone()));
        }
        if !self.dataset.exists() {
            return Err(ConfigError::MissingFile(self.dataset.clone()));
        }
        self.policy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.optimizer.max_full_evals < 1 {
            return Err(ConfigError::Invalid(
                "optimizer.max_full_evals must be at least 1".to_string(),
            ));
        }
        if self.optimizer.reflection_minibatch_size < 1 {
            return Err(ConfigError::Invalid(
                "optimizer.reflection_minibatch_size must be at least 1".to_string(),
            ));
        }
        if self.optimizer.num_threads < 1 {
            return Err(ConfigError::Invalid(
                "optimizer.num_threads must be at least 1".to_string(),
            ));
        }
        self.student.validate("student")?;
        self.reflection.validate("reflection")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn minimal_contract_json() -> String {
        serde_json::json!({
            "contract_id": "demo",
            "criteria_text": "keep empirical studies",
            "input_fields": [
                {"name": "criteria", "description": "c", "role": "input"},
                {"name": "title", "description": "t", "role": "input"},
                {"name": "abstract", "description": "a", "role": "input"}
            ],
            "output_fields": [
                {"name": "checks", "description": "f", "role": "output",
                 "constraint": "free_text"},
                {"name": "label", "description": "d", "role": "output",
                 "constraint": {"token_set": ["include", "exclude"]}}
            ],
            "harness_text": "screen the records"
        })
        .to_string()
    }

    fn config_json(student_kind: &str) -> String {
        format!(
            r#"{{
            "contract": "contract.json",
            "dataset": "records.jsonl",
            "split": {{"train": 1, "val": 1, "test": 1, "seed": 10}},
            "optimizer": {{"max_full_evals": 2, "reflection_minibatch_size": 1,
                           "num_threads": 1, "seed": 10}},
            "student": {{"kind": "{student_kind}", "model_id": "m",
                         "script": "script.json", "cycle": true,
                         "api_key_env": "PROMPTCAL_TEST_MISSING_KEY"}},
            "reflection": {{"kind": "mock", "model_id": "r", "script": "script.json"}},
            "out": "runs/demo"
        }}"#
        )
    }

    fn scaffold(dir: &Path, student_kind: &str) -> PathBuf {
        write_file(dir, "contract.json", &minimal_contract_json());
        write_file(dir, "records.jsonl", r#"{"id":"r1","title":"t","abstract":"a","label":"include"}"#);
        write_file(dir, "script.json", r#"["response"]"#);
        write_file(dir, "config.json", &config_json(student_kind))
    }

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = scaffold(dir.path(), "mock");
        let config = RunConfig::load(&path).unwrap();
        assert!(config.contract.is_absolute());
        assert!(config.dataset.starts_with(dir.path()));
        assert_eq!(config.metric, MetricKind::Compact);
        assert_eq!(config.policy, ScoringPolicy::default());
        assert!(config.out.starts_with(dir.path()));
    }

    #[test]
    fn missing_credential_fails_at_startup() {
        let dir = tempfile::tempdir().unwrap();
        let path = scaffold(dir.path(), "http");
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, ConfigError::MissingCredential(var)
            if var == "PROMPTCAL_TEST_MISSING_KEY"));
    }

    #[test]
    fn missing_script_file_fails_at_startup() {
        let dir = tempfile::tempdir().unwrap();
        let path = scaffold(dir.path(), "mock");
        std::fs::remove_file(dir.path().join("script.json")).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, ConfigError::MissingFile(_)));
    }

    #[test]
    fn zero_budget_is_rejected_before_any_call() {
        let dir = tempfile::tempdir().unwrap();
        let path = scaffold(dir.path(), "mock");
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"max_full_evals\": 2", "\"max_full_evals\": 0");
        std::fs::write(&path, text).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(msg) if msg.contains("max_full_evals")));
    }

    #[test]
    fn backend_settings_apply_role_defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = scaffold(dir.path(), "mock");
        let config = RunConfig::load(&path).unwrap();
        let (_, student) = config.student.build(Role::Student).unwrap();
        assert_eq!(student.temperature, 0.0);
        let (_, reflection) = config.reflection.build(Role::Reflection).unwrap();
        assert_eq!(reflection.temperature, 1.0);
        assert_eq!(reflection.max_tokens, Some(16000));

        let mut custom = config.student.clone();
        custom.temperature = Some(0.3);
        custom.max_tokens = Some(64);
        let (_, settings) = custom.build(Role::Student).unwrap();
        assert_eq!(settings.temperature, 0.3);
        assert_eq!(settings.max_tokens, Some(64));
    }
}
