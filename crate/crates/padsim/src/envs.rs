//! Synthetic verifiable tasks with deterministic verifiers.
//!
//! Every task shares one token convention: digits 0-9 are token ids 0-9, EOS
//! is token 10, and any further token is a spare "wrong symbol" that the
//! policy can emit but that never helps. A response is decoded by taking its
//! tokens up to (not including) the first EOS.
//!
//! Tasks and their difficulty parameterisations (difficulty is a knob in
//! `[0, 1]`; raising it never raises the solve rate of the uniform policy):
//!
//! * `digit_sum` — the decoded digits must reach a target sum. The target is
//!   `difficulty * 9 * max_len` (at least 1), so difficulty scales the target
//!   against the largest sum any response could reach. Solve rate under any
//!   fixed set of sampled responses is exactly non-increasing in the target.
//! * `parity_echo` — the decoded digits must reproduce a prompt parity
//!   pattern position by position (even digit for 0, odd digit for 1) and
//!   stop right after it. Difficulty scales the pattern length; longer
//!   patterns are strictly harder to hit by chance.
//! * `padding_exploit` — a designated answer digit must appear at least
//!   `min_count` times anywhere in the decoded response, so longer outputs
//!   weakly raise the success probability of a noisy policy. Difficulty
//!   raises `min_count` (1 at low difficulty, the plain "appears anywhere"
//!   rule). This is the environment that rewards response padding and is
//!   used to study length drift.
//!
//! The module also carries a stagnation probe: the Monte-Carlo probability
//! that a whole rollout group comes back all-correct or all-incorrect, i.e.
//! the fraction of groups whose group-relative advantages will be uniformly
//! zero and therefore contribute no gradient.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{GenParams, PolicyError, PolicyParams, TokenId, TokenSequence};
use crate::seeding;

/// Number of digit tokens; digit `d` is token id `d`.
pub const DIGIT_TOKENS: usize = 10;
/// Dedicated end-of-sequence token shared by every task.
pub const EOS_TOKEN: TokenId = 10;
/// Smallest vocabulary that fits the digits plus EOS. The default of 12
/// leaves one spare token so "wrong symbol" behaviour stays reachable.
pub const MIN_VOCAB: usize = 11;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("vocab_size must be at least {MIN_VOCAB} (10 digits + EOS), got {0}")]
    VocabTooSmall(usize),
    #[error("max_len must be at least 2 so a digit and an EOS both fit, got {0}")]
    MaxLenTooSmall(usize),
    #[error("difficulty range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1")]
    BadDifficultyRange { lo: f64, hi: f64 },
    #[error("dataset_size must be at least 1")]
    EmptyDataset,
    #[error("sequence answers prompt '{got}' but was verified against '{expected}'")]
    PromptMismatch { expected: String, got: String },
    #[error("prompt '{prompt_id}' is tagged {task} but carries a {spec} payload")]
    SpecMismatch {
        prompt_id: String,
        task: TaskKind,
        spec: &'static str,
    },
    #[error("policy (vocab {vocab_size}, eos {eos}) does not match the task token convention")]
    PolicyConventionMismatch { vocab_size: usize, eos: TokenId },
    #[error("stagnation probe needs group_size >= 2, got {0}")]
    DegenerateProbeGroup(usize),
    #[error("stagnation probe needs at least one group")]
    ZeroProbeGroups,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {source}")]
    DatasetParse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("dataset serialize: {0}")]
    DatasetWrite(serde_json::Error),
}

pub type EnvResult<T> = Result<T, EnvError>;

/// The three synthetic task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    DigitSum,
    ParityEcho,
    PaddingExploit,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TaskKind::DigitSum => "digit_sum",
            TaskKind::ParityEcho => "parity_echo",
            TaskKind::PaddingExploit => "padding_exploit",
        };
        f.write_str(name)
    }
}

/// Task-specific prompt payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    /// Decoded digits must reach `target`.
    DigitSum { target: u32 },
    /// Decoded digits must match this parity pattern (0 = even, 1 = odd).
    ParityEcho { pattern: Vec<u8> },
    /// `answer_token` must appear at least `min_count` times.
    PaddingExploit {
        answer_token: TokenId,
        #[serde(default = "default_min_count")]
        min_count: usize,
    },
}

fn default_min_count() -> usize {
    1
}

impl TaskSpec {
    fn name(&self) -> &'static str {
        match self {
            TaskSpec::DigitSum { .. } => "digit_sum",
            TaskSpec::ParityEcho { .. } => "parity_echo",
            TaskSpec::PaddingExploit { .. } => "padding_exploit",
        }
    }

    fn matches(&self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (TaskSpec::DigitSum { .. }, TaskKind::DigitSum)
                | (TaskSpec::ParityEcho { .. }, TaskKind::ParityEcho)
                | (TaskSpec::PaddingExploit { .. }, TaskKind::PaddingExploit)
        )
    }
}

/// One verifiable prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    /// Opaque identifier, unique within a dataset.
    pub prompt_id: String,
    /// Which verifier applies.
    pub task_kind: TaskKind,
    /// Task payload the verifier checks against.
    pub spec: TaskSpec,
    /// Difficulty knob in `[0, 1]` this prompt was generated at.
    pub difficulty: f64,
}

impl Prompt {
    /// Token prefix that conditions the policy on this prompt: the target's
    /// decimal digits for `digit_sum`, the pattern bits (as digit tokens 0/1)
    /// for `parity_echo`, and the answer token for `padding_exploit`.
    pub fn encoding(&self) -> Vec<TokenId> {
        match &self.spec {
            TaskSpec::DigitSum { target } => decimal_digits(*target),
            TaskSpec::ParityEcho { pattern } => {
                pattern.iter().map(|&b| (b % 2) as TokenId).collect()
            }
            TaskSpec::PaddingExploit { answer_token, .. } => vec![*answer_token],
        }
    }
}

fn decimal_digits(mut value: u32) -> Vec<TokenId> {
    if value == 0 {
        return vec![0];
    }
    let mut digits = Vec::new();
    while value > 0 {
        digits.push((value % 10) as TokenId);
        value /= 10;
    }
    digits.reverse();
    digits
}

/// Environment / dataset configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub task_kind: TaskKind,
    /// Vocabulary size; at least [`MIN_VOCAB`], default 12 (one spare token).
    pub vocab_size: usize,
    /// Maximum response length in tokens.
    pub max_len: usize,
    /// Inclusive difficulty range the dataset is stratified across.
    pub difficulty_range: [f64; 2],
    /// Number of prompts to generate.
    pub dataset_size: usize,
    /// Seed for payload generation; the same config always yields the same
    /// dataset.
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task_kind: TaskKind::DigitSum,
            vocab_size: 12,
            max_len: 32,
            difficulty_range: [0.3, 0.7],
            dataset_size: 64,
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> EnvResult<()> {
        if self.vocab_size < MIN_VOCAB {
            return Err(EnvError::VocabTooSmall(self.vocab_size));
        }
        if self.max_len < 2 {
            return Err(EnvError::MaxLenTooSmall(self.max_len));
        }
        let [lo, hi] = self.difficulty_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(EnvError::BadDifficultyRange { lo, hi });
        }
        if self.dataset_size == 0 {
            return Err(EnvError::EmptyDataset);
        }
        Ok(())
    }

    /// Largest digit sum any response of up to `max_len` tokens can reach.
    fn max_achievable_sum(&self) -> u32 {
        9 * self.max_len as u32
    }
}

/// Generates the dataset for a config: `dataset_size` prompts with
/// difficulties stratified evenly across `difficulty_range` (a single prompt
/// sits at the midpoint), payloads drawn deterministically from `rng_seed`.
///
/// Prompt ids are unique and name the task, e.g. `digit_sum-00003`.
pub fn generate_dataset(cfg: &EnvConfig) -> EnvResult<Vec<Prompt>> {
    cfg.validate()?;
    let [lo, hi] = cfg.difficulty_range;
    let n = cfg.dataset_size;
    let mut rng = seeding::rng_for(cfg.rng_seed, &[seeding::stream::STAGE]);
    let mut prompts = Vec::with_capacity(n);
    for i in 0..n {
        let difficulty = if n == 1 {
            (lo + hi) / 2.0
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        };
        let spec = match cfg.task_kind {
            TaskKind::DigitSum => {
                let target = (difficulty * cfg.max_achievable_sum() as f64).round() as u32;
                TaskSpec::DigitSum {
                    target: target.max(1),
                }
            }
            TaskKind::ParityEcho => {
                // Pattern plus its EOS must fit inside max_len.
                let cap = cfg.max_len - 1;
                let len = (1.0 + difficulty * (cap as f64 - 1.0)).round() as usize;
                let pattern = (0..len.clamp(1, cap))
                    .map(|_| u8::from(rng.random::<bool>()))
                    .collect();
                TaskSpec::ParityEcho { pattern }
            }
            TaskKind::PaddingExploit => TaskSpec::PaddingExploit {
                answer_token: rng.random_range(0..DIGIT_TOKENS),
                min_count: 1 + (difficulty * 3.0).floor().min(3.0) as usize,
            },
        };
        prompts.push(Prompt {
            prompt_id: format!("{}-{:05}", cfg.task_kind, i),
            task_kind: cfg.task_kind,
            spec,
            difficulty,
        });
    }
    Ok(prompts)
}

/// Decoded view of a response: tokens before the first EOS.
fn decode(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.iter().position(|&t| t == EOS_TOKEN) {
        Some(eos) => &tokens[..eos],
        None => tokens,
    }
}

/// Scores a response against its prompt: 1 for correct, 0 for incorrect.
///
/// # Errors
///
/// Rejects a sequence whose `prompt_id` does not match the prompt, and a
/// prompt whose payload variant does not match its `task_kind`.
pub fn verify(prompt: &Prompt, seq: &TokenSequence) -> EnvResult<u8> {
    if seq.prompt_id != prompt.prompt_id {
        return Err(EnvError::PromptMismatch {
            expected: prompt.prompt_id.clone(),
            got: seq.prompt_id.clone(),
        });
    }
    if !prompt.spec.matches(prompt.task_kind) {
        return Err(EnvError::SpecMismatch {
            prompt_id: prompt.prompt_id.clone(),
            task: prompt.task_kind,
            spec: prompt.spec.name(),
        });
    }
    let decoded = decode(&seq.tokens);
    let correct = match &prompt.spec {
        TaskSpec::DigitSum { target } => {
            let all_digits = decoded.iter().all(|&t| t < DIGIT_TOKENS);
            let sum: u32 = decoded.iter().map(|&t| t as u32).sum();
            all_digits && sum >= *target
        }
        TaskSpec::ParityEcho { pattern } => {
            decoded.len() == pattern.len()
                && decoded
                    .iter()
                    .zip(pattern.iter())
                    .all(|(&t, &b)| t < DIGIT_TOKENS && (t % 2) as u8 == b % 2)
        }
        TaskSpec::PaddingExploit {
            answer_token,
            min_count,
        } => decoded.iter().filter(|&&t| t == *answer_token).count() >= *min_count,
    };
    Ok(u8::from(correct))
}

/// Monte-Carlo estimate of the probability that a `group_size`-rollout group
/// under `params` comes back all-correct or all-incorrect — the groups whose
/// group-relative advantages collapse to zero. Prompts are drawn uniformly
/// from the config's dataset; sampling uses the default generation settings.
pub fn stagnation_probe(
    cfg: &EnvConfig,
    params: &PolicyParams,
    group_size: usize,
    n_groups: usize,
    seed: u64,
) -> EnvResult<f64> {
    probe_with(cfg, params, group_size, n_groups, seed, |prompt, seq, _| {
        verify(prompt, seq)
    })
}

/// Probe core with a pluggable verdict function (prompt, sequence, rollout
/// index); `stagnation_probe` instantiates it with [`verify`].
fn probe_with<F>(
    cfg: &EnvConfig,
    params: &PolicyParams,
    group_size: usize,
    n_groups: usize,
    seed: u64,
    verdict: F,
) -> EnvResult<f64>
where
    F: Fn(&Prompt, &TokenSequence, usize) -> EnvResult<u8>,
{
    if group_size < 2 {
        return Err(EnvError::DegenerateProbeGroup(group_size));
    }
    if n_groups == 0 {
        return Err(EnvError::ZeroProbeGroups);
    }
    check_policy_convention(cfg, params)?;
    let dataset = generate_dataset(cfg)?;
    let gen = GenParams::default();
    let mut uniform = 0usize;
    for g in 0..n_groups {
        let mut rng = seeding::rng_for(seed, &[seeding::stream::ROLLOUT, g as u64]);
        let prompt = &dataset[rng.random_range(0..dataset.len())];
        let encoding = prompt.encoding();
        let mut first = None;
        let mut mixed = false;
        for r in 0..group_size {
            let seq = params.sample_sequence(&prompt.prompt_id, &encoding, &gen, &mut rng)?;
            let v = verdict(prompt, &seq, r)?;
            match first {
                None => first = Some(v),
                Some(f) if f != v => {
                    mixed = true;
                }
                _ => {}
            }
        }
        if !mixed {
            uniform += 1;
        }
    }
    Ok(uniform as f64 / n_groups as f64)
}

/// A policy is usable with these tasks only if it shares the token
/// convention: EOS at token 10 and room for all ten digits.
pub fn check_policy_convention(cfg: &EnvConfig, params: &PolicyParams) -> EnvResult<()> {
    if params.eos_token != EOS_TOKEN
        || params.vocab_size < MIN_VOCAB
        || params.vocab_size != cfg.vocab_size
        || params.max_len != cfg.max_len
    {
        return Err(EnvError::PolicyConventionMismatch {
            vocab_size: params.vocab_size,
            eos: params.eos_token,
        });
    }
    Ok(())
}

/// Writes a dataset as line-delimited JSON, one prompt per line.
pub fn write_dataset(path: &Path, prompts: &[Prompt]) -> EnvResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for prompt in prompts {
        let line = serde_json::to_string(prompt).map_err(EnvError::DatasetWrite)?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]; blank lines are ignored.
pub fn read_dataset(path: &Path) -> EnvResult<Vec<Prompt>> {
    let file = BufReader::new(File::open(path)?);
    let mut prompts = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let prompt = serde_json::from_str(&line).map_err(|source| EnvError::DatasetParse {
            line: i + 1,
            source,
        })?;
        prompts.push(prompt);
    }
    Ok(prompts)
}
