//! Run manifests: the self-contained record written next to every run's
//! artifacts.
//!
//! A manifest carries everything needed to reproduce and audit a run — the
//! fully resolved configuration (no placeholder seeds), the seed set, the
//! config fingerprint, wall-clock start/end in RFC 3339, the software
//! version, and a typed list of artifact paths. Artifact paths are stored
//! relative to the manifest's directory so a run directory can be moved or
//! archived wholesale.
//!
//! The config hash is serialized as a hexadecimal string: JSON numbers are
//! commonly read back through double-precision floats, which silently lose
//! the top bits of a 64-bit fingerprint.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("failed to {action} manifest {path}: {source}")]
    Io {
        action: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Malformed {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest serialization failed: {0}")]
    Serialize(#[source] serde_json::Error),
    #[error("config hash '{0}' is not a 16-digit hex string")]
    BadHash(String),
}

pub type ManifestResult<T> = Result<T, ManifestError>;

/// One artifact produced by a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// What the file is: `metrics`, `checkpoint`, `curves`, `summary`,
    /// `plot`, ...
    pub kind: String,
    /// Path relative to the manifest's directory.
    pub path: PathBuf,
}

/// The record written as `manifest.json` in every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Identifier for the run; by convention the run directory's basename.
    pub run_id: String,
    /// Crate version that produced the run.
    pub software_version: String,
    /// FNV-1a fingerprint of the resolved config, in hex.
    pub config_hash: String,
    /// Root seed the run derived everything from.
    pub root_seed: u64,
    /// Every seed involved: the per-stage seeds of a training run, or the
    /// seed set of an ablation.
    pub seeds: Vec<u64>,
    /// The fully resolved configuration — self-contained reproduction input.
    pub resolved_config: RunConfig,
    /// Wall-clock start, RFC 3339.
    pub started_at: String,
    /// Wall-clock end, RFC 3339.
    pub finished_at: String,
    /// Artifacts the run produced, paths relative to the manifest.
    pub artifacts: Vec<Artifact>,
}

/// RFC 3339 timestamp for "now", second precision, UTC.
pub fn timestamp_now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Renders a config hash the way manifests store it.
pub fn format_config_hash(hash: u64) -> String {
    format!("{hash:016x}")
}

/// Parses a manifest's config hash back to the integer fingerprint.
pub fn parse_config_hash(text: &str) -> ManifestResult<u64> {
    if text.len() != 16 {
        return Err(ManifestError::BadHash(text.to_string()));
    }
    u64::from_str_radix(text, 16).map_err(|_| ManifestError::BadHash(text.to_string()))
}

impl RunManifest {
    /// Writes the manifest as pretty-printed JSON.
    pub fn save(&self, path: &Path) -> ManifestResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(ManifestError::Serialize)?;
        fs::write(path, text).map_err(|source| ManifestError::Io {
            action: "write",
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads a manifest back, validating the timestamps and hash format.
    pub fn load(path: &Path) -> ManifestResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            action: "read",
            path: path.display().to_string(),
            source,
        })?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|source| ManifestError::Malformed {
                path: path.display().to_string(),
                source,
            })?;
        parse_config_hash(&manifest.config_hash)?;
        for (field, value) in [
            ("started_at", &manifest.started_at),
            ("finished_at", &manifest.finished_at),
        ] {
            if DateTime::parse_from_rfc3339(value).is_err() {
                return Err(ManifestError::Malformed {
                    path: path.display().to_string(),
                    source: serde::de::Error::custom(format!(
                        "{field} '{value}' is not an RFC 3339 timestamp"
                    )),
                });
            }
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> RunManifest {
        let mut config = RunConfig::default();
        config.resolve();
        RunManifest {
            run_id: "run_a".to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: format_config_hash(config.config_hash()),
            root_seed: config.root_seed,
            seeds: config.stages.iter().map(|s| s.seed).collect(),
            resolved_config: config,
            started_at: "2026-08-16T10:00:00Z".to_string(),
            finished_at: "2026-08-16T10:05:00Z".to_string(),
            artifacts: vec![Artifact {
                kind: "metrics".to_string(),
                path: PathBuf::from("stage_00_mrl_analog/metrics.csv"),
            }],
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = sample();
        manifest.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded, manifest);
    }

    #[test]
    fn hash_format_round_trips_and_rejects_garbage() {
        for hash in [0u64, 1, u64::MAX, 0xdead_beef_cafe_f00d] {
            assert_eq!(parse_config_hash(&format_config_hash(hash)).unwrap(), hash);
        }
        assert!(parse_config_hash("xyz").is_err());
        assert!(parse_config_hash("123").is_err(), "short hex is rejected");
        // A raw decimal u64 would be ambiguous; only 16-digit hex is valid.
        assert!(parse_config_hash("18446744073709551615").is_err());
    }

    #[test]
    fn load_rejects_bad_timestamps_and_bad_hashes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");

        let mut bad_time = sample();
        bad_time.started_at = "yesterday".to_string();
        bad_time.save(&path).unwrap();
        let err = RunManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("RFC 3339"), "got: {err}");

        let mut bad_hash = sample();
        bad_hash.config_hash = "not-hex".to_string();
        bad_hash.save(&path).unwrap();
        assert!(RunManifest::load(&path).is_err());
    }

    #[test]
    fn missing_manifest_error_names_the_path() {
        let err = RunManifest::load(Path::new("/nope/manifest.json")).unwrap_err();
        assert!(err.to_string().contains("/nope/manifest.json"));
    }

    #[test]
    fn timestamp_now_is_rfc3339() {
        assert!(DateTime::parse_from_rfc3339(&timestamp_now()).is_ok());
    }

    #[test]
    fn resolved_config_in_manifest_reproduces_the_hash() {
        let manifest = sample();
        assert_eq!(
            format_config_hash(manifest.resolved_config.config_hash()),
            manifest.config_hash,
            "the stored config must hash to the stored fingerprint"
        );
    }
}
