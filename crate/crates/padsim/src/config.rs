//! Run configuration: JSON loading, dotted-path overrides, seed resolution,
//! and whole-config validation.
//!
//! A [`RunConfig`] describes a full curriculum run — a root seed, how the
//! initial policy is built, and an ordered list of stages. Config files are
//! JSON; unknown fields are rejected so typos fail loudly instead of
//! silently falling back to defaults.
//!
//! The lifecycle is **load → override → resolve → validate**:
//!
//! 1. [`load_value`] reads the file into a JSON tree.
//! 2. [`apply_override`] applies `--set key.path=value` edits to that tree,
//!    so overrides are checked by the same deserializer as the file itself.
//! 3. [`RunConfig::resolve`] replaces the `0` placeholders — stage seeds,
//!    dataset seeds, temperature horizons — with values derived from the
//!    root seed. Resolution is idempotent; a resolved config is
//!    self-contained and reproduces the run with no external inputs.
//! 4. [`RunConfig::validate`] collects *every* violated constraint at once,
//!    so a config can be fixed in a single edit pass.
//!
//! [`RunConfig::config_hash`] fingerprints the canonical JSON serialization
//! with FNV-1a; the hash is embedded in checkpoints so resumption can detect
//! a mismatched config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::envs::EOS_TOKEN;
use crate::policy::PolicyParams;
use crate::seeding::{derive_seed, fnv1a64, stream};
use crate::trainer::{PolicyConfig, StageConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("config does not match the expected schema: {0}")]
    Schema(#[source] serde_json::Error),
    #[error("bad override '{spec}': {reason}")]
    BadOverride { spec: String, reason: String },
    #[error("invalid config: {}", violations.join("; "))]
    Invalid { violations: Vec<String> },
}

pub type ConfigResult<T> = Result<T, ConfigError>;

/// Top-level configuration for a curriculum run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed every unset stage seed derives from.
    pub root_seed: u64,
    /// How the initial policy table is shaped and initialised.
    pub policy: PolicyConfig,
    /// Stages, run in order with parameters threaded through.
    pub stages: Vec<StageConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            root_seed: 0,
            policy: PolicyConfig::default(),
            stages: vec![StageConfig::default()],
        }
    }
}

/// Reads a config file into a JSON tree, keeping the path in any error.
pub fn load_value(path: &Path) -> ConfigResult<Value> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Applies one `key.path=value` override to a JSON tree.
///
/// The path is dot-separated. Object keys that do not exist yet are created
/// (as objects for intermediate segments); array indices must already exist.
/// The value is parsed as JSON when possible (`0.25`, `true`, `[1,2]`,
/// `"pad"`) and falls back to a bare string otherwise, so
/// `--set stages.0.strategy=pad` works without shell-quoted JSON.
pub fn apply_override(tree: &mut Value, spec: &str) -> ConfigResult<()> {
    let err = |reason: String| ConfigError::BadOverride {
        spec: spec.to_string(),
        reason,
    };
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| err("expected key.path=value".to_string()))?;
    if path.is_empty() {
        return Err(err("empty key path".to_string()));
    }
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(err(format!("empty segment in key path '{path}'")));
    }
    let value: Value =
        serde_json::from_str(raw_value).unwrap_or_else(|_| Value::String(raw_value.to_string()));

    let mut node = tree;
    for (depth, segment) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        let here = || segments[..=depth].join(".");
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(segment.to_string(), value);
                    return Ok(());
                }
                // Auto-create missing intermediate objects.
                map.entry(segment.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let index: usize = segment
                    .parse()
                    .map_err(|_| err(format!("'{}' is not an array index", here())))?;
                let len = items.len();
                let slot = items.get_mut(index).ok_or_else(|| {
                    err(format!(
                        "array index {index} out of bounds at '{}' (length {len})",
                        here()
                    ))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            other => {
                return Err(err(format!(
                    "cannot descend into {} at '{}'",
                    json_kind(other),
                    here()
                )));
            }
        };
    }
    unreachable!("loop returns on the last segment");
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

impl RunConfig {
    /// Deserializes a JSON tree, rejecting unknown fields.
    pub fn from_value(value: Value) -> ConfigResult<Self> {
        serde_json::from_value(value).map_err(ConfigError::Schema)
    }

    /// Loads a config file.
    pub fn load(path: &Path) -> ConfigResult<Self> {
        Self::from_value(load_value(path)?)
    }

    /// Replaces placeholder values with derived ones:
    ///
    /// * a stage seed of `0` becomes `derive_seed(root_seed, [STAGE, i])`;
    /// * a dataset seed of `0` becomes `derive_seed(stage_seed, [PROMPTS])`;
    /// * a temperature horizon of `0` becomes the stage step count.
    ///
    /// Resolution is idempotent: resolving a resolved config changes
    /// nothing, so hashes of resolved configs are stable.
    pub fn resolve(&mut self) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            if stage.seed == 0 {
                stage.seed = derive_seed(self.root_seed, &[stream::STAGE, i as u64]);
            }
            if stage.env.rng_seed == 0 {
                stage.env.rng_seed = derive_seed(stage.seed, &[stream::PROMPTS]);
            }
            if stage.pad.tau.horizon == 0 {
                stage.pad.tau.horizon = stage.steps;
            }
        }
    }

    /// Collects every violated constraint across the whole config. Stage
    /// violations are prefixed `stages[i].` so they can be located directly.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut violations = Vec::new();
        if self.stages.is_empty() {
            violations.push("stages must not be empty".to_string());
        }
        if !self.policy.init_scale.is_finite() || self.policy.init_scale < 0.0 {
            violations.push(format!(
                "policy.init_scale must be finite and non-negative, got {}",
                self.policy.init_scale
            ));
        }
        if let Some(first) = self.stages.first() {
            // One policy table serves the whole curriculum, so the table
            // shape must be consistent and within the size cap.
            if let Err(e) =
                PolicyParams::table_entries(first.env.vocab_size, self.policy.context_order)
            {
                violations.push(format!("policy table: {e}"));
            }
            for (i, stage) in self.stages.iter().enumerate().skip(1) {
                if stage.env.vocab_size != first.env.vocab_size {
                    violations.push(format!(
                        "stages[{i}].env.vocab_size ({}) differs from stages[0] ({}); \
                         one policy table serves all stages",
                        stage.env.vocab_size, first.env.vocab_size
                    ));
                }
                if stage.env.max_len != first.env.max_len {
                    violations.push(format!(
                        "stages[{i}].env.max_len ({}) differs from stages[0] ({}); \
                         one policy table serves all stages",
                        stage.env.max_len, first.env.max_len
                    ));
                }
            }
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if let Err(stage_violations) = stage.validate() {
                violations.extend(
                    stage_violations
                        .into_iter()
                        .map(|v| format!("stages[{i}].{v}")),
                );
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Builds the initial policy described by this config: table shape from
    /// the first stage's environment, logits seeded from the root seed.
    pub fn initial_policy(&self) -> ConfigResult<PolicyParams> {
        let first = self.stages.first().ok_or(ConfigError::Invalid {
            violations: vec!["stages must not be empty".to_string()],
        })?;
        PolicyParams::random_init(
            first.env.vocab_size,
            self.policy.context_order,
            first.env.max_len,
            EOS_TOKEN,
            self.policy.init_scale,
            derive_seed(self.root_seed, &[stream::INIT]),
        )
        .map_err(|e| ConfigError::Invalid {
            violations: vec![format!("initial policy: {e}")],
        })
    }

    /// FNV-1a fingerprint of the canonical JSON serialization. Field order
    /// is the struct declaration order, so the hash is deterministic.
    pub fn config_hash(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("config serialization cannot fail");
        fnv1a64(&bytes)
    }
}
