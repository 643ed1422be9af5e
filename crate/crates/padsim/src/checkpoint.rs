//! Versioned binary checkpoints.
//!
//! A checkpoint captures everything needed to continue a stage bit-for-bit:
//! the policy table, the position in the run (stage index / name / step), the
//! seeds, and a hash of the resolved configuration so a resumed run can
//! refuse a mismatched config. Because all randomness is derived statelessly
//! from `(stage_seed, step, ...)` index paths (see [`crate::seeding`]),
//! storing the seeds *is* storing the RNG state — there is no generator
//! cursor to serialize.
//!
//! # Format (version 1, all integers little-endian)
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PADSIMCK"
//! 8       4     format version (u32)
//! 12      8     config hash (u64, FNV-1a of the resolved config JSON)
//! 20      8     root seed (u64)
//! 28      8     stage seed (u64)
//! 36      8     stage index (u64)
//! 44      8     step (u64)
//! 52      4     stage name byte length (u32)
//! 56      n     stage name (UTF-8)
//! ..      8*4   vocab_size, context_order, max_len, eos_token (u64 each)
//! ..      8*2   logit rows, logit cols (u64 each)
//! ..      8*r*c logits, row-major f64 bits
//! end     8     FNV-1a checksum of every preceding byte (u64)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::policy::{PolicyError, PolicyParams};
use crate::seeding::fnv1a64;

/// File signature.
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PADSIMCK";
/// Current (and only) format version.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("checkpoint {path} has format version {found}, this build supports {supported}")]
    UnsupportedVersion {
        path: String,
        found: u32,
        supported: u32,
    },
    #[error("checkpoint {path} is truncated while reading {what}")]
    Truncated { path: String, what: &'static str },
    #[error("checkpoint {path} failed its integrity check (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch {
        path: String,
        stored: u64,
        computed: u64,
    },
    #[error("checkpoint {path} carries a non-UTF-8 stage name")]
    BadStageName { path: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

pub type CheckpointResult<T> = Result<T, CheckpointError>;

/// A saved training position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// FNV-1a hash of the resolved run configuration.
    pub config_hash: u64,
    /// The run's root seed.
    pub root_seed: u64,
    /// The seed all of this stage's random streams derive from.
    pub stage_seed: u64,
    /// Position of the stage in the curriculum.
    pub stage_index: usize,
    /// Stage name, e.g. `mrl_analog`.
    pub stage_name: String,
    /// Steps completed within the stage when this was taken.
    pub step: usize,
    /// The policy at that point.
    pub params: PolicyParams,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> CheckpointResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                path: self.path.to_string(),
                what,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> CheckpointResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> CheckpointResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> CheckpointResult<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    /// Serializes to the version-1 binary layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.params.logits.dim();
        let mut out = Vec::with_capacity(64 + self.stage_name.len() + rows * cols * 8);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.root_seed.to_le_bytes());
        out.extend_from_slice(&self.stage_seed.to_le_bytes());
        out.extend_from_slice(&(self.stage_index as u64).to_le_bytes());
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        out.extend_from_slice(&(self.stage_name.len() as u32).to_le_bytes());
        out.extend_from_slice(self.stage_name.as_bytes());
        for dim in [
            self.params.vocab_size,
            self.params.context_order,
            self.params.max_len,
            self.params.eos_token,
        ] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u64).to_le_bytes());
        for &x in self.params.logits.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> CheckpointResult<()> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> CheckpointResult<Self> {
        let path_str = path.display().to_string();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path_str.clone(),
            source,
        })?;
        Self::from_bytes(&bytes, &path_str)
    }

    fn from_bytes(bytes: &[u8], path: &str) -> CheckpointResult<Self> {
        if bytes.len() < 8 + 4 + 8 {
            return Err(CheckpointError::Truncated {
                path: path.to_string(),
                what: "header",
            });
        }
        // Verify the trailing checksum before trusting any field.
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch {
                path: path.to_string(),
                stored,
                computed,
            });
        }
        let mut cur = Cursor {
            bytes: body,
            pos: 0,
            path,
        };
        let magic = cur.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic {
                path: path.to_string(),
            });
        }
        let version = cur.u32("format version")?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                path: path.to_string(),
                found: version,
                supported: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let config_hash = cur.u64("config hash")?;
        let root_seed = cur.u64("root seed")?;
        let stage_seed = cur.u64("stage seed")?;
        let stage_index = cur.u64("stage index")? as usize;
        let step = cur.u64("step")? as usize;
        let name_len = cur.u32("stage name length")? as usize;
        let name_bytes = cur.take(name_len, "stage name")?;
        let stage_name = std::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::BadStageName {
                path: path.to_string(),
            })?
            .to_string();
        let vocab_size = cur.u64("vocab size")? as usize;
        let context_order = cur.u64("context order")? as usize;
        let max_len = cur.u64("max len")? as usize;
        let eos_token = cur.u64("eos token")? as usize;
        let rows = cur.u64("logit rows")? as usize;
        let cols = cur.u64("logit cols")? as usize;
        let mut flat = Vec::with_capacity(rows.saturating_mul(cols));
        for _ in 0..rows * cols {
            flat.push(cur.f64("logits")?);
        }
        let logits =
            Array2::from_shape_vec((rows, cols), flat).map_err(|_| CheckpointError::Truncated {
                path: path.to_string(),
                what: "logit table shape",
            })?;
        // from_logits re-validates dimensions and finiteness, so a checkpoint
        // can never smuggle an invalid policy back into a run.
        let params = PolicyParams::from_logits(logits, context_order, max_len, eos_token)?;
        if params.vocab_size != vocab_size {
            return Err(CheckpointError::Truncated {
                path: path.to_string(),
                what: "vocab size consistency",
            });
        }
        Ok(Self {
            config_hash,
            root_seed,
            stage_seed,
            stage_index,
            stage_name,
            step,
            params,
        })
    }
}
