//! Order-k autoregressive softmax policy over a small token vocabulary.
//!
//! The policy is a logit table indexed by (context row, next token). A
//! context is the last `context_order` tokens of the prefix — the prompt
//! encoding followed by the response so far — left-padded with EOS before the
//! sequence start (EOS never occurs mid-sequence, so it doubles as a start
//! sentinel). With order 1 and a 12-token vocabulary the whole "model" is a
//! 12 x 12 table: small enough that gradients are analytic and every
//! next-token distribution can be enumerated exactly in tests.
//!
//! Generation draws from a temperature-scaled, nucleus-truncated softmax.
//! Log-probability evaluation always uses the full untruncated temperature-1
//! softmax, so stored behaviour log-probs and the importance ratios built
//! from them refer to the unmodified policy distribution even when sampling
//! was sharpened or truncated.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token identifier: an index into the policy vocabulary.
pub type TokenId = usize;

/// Temperatures at or below this are treated as the zero-temperature limit:
/// greedy argmax decoding, ties broken toward the lowest token id so decoding
/// stays deterministic.
pub const GREEDY_TEMPERATURE: f64 = 1e-9;

/// Hard cap on logit-table entries (rows x vocab) so a typo'd `context_order`
/// fails fast instead of trying to allocate gigabytes.
const MAX_TABLE_ENTRIES: u64 = 1 << 22;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("vocab_size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("eos token {eos} is outside the vocabulary of size {vocab_size}")]
    EosOutOfRange { eos: TokenId, vocab_size: usize },
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error(
        "logit table would need {entries} entries (vocab {vocab_size}, context order \
         {context_order}); cap is {cap}"
    )]
    TableTooLarge {
        entries: u64,
        vocab_size: usize,
        context_order: usize,
        cap: u64,
    },
    #[error(
        "logits shape ({rows}, {cols}) does not match vocab {vocab_size} at context order \
         {context_order} (expected ({expected_rows}, {vocab_size}))"
    )]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        vocab_size: usize,
        context_order: usize,
    },
    #[error("non-finite logit at ({row}, {col})")]
    NonFiniteLogit { row: usize, col: usize },
    #[error("init scale must be finite and non-negative, got {0}")]
    BadInitScale(f64),
    #[error("token {token} at position {position} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfRange {
        token: TokenId,
        position: usize,
        vocab_size: usize,
    },
    #[error("generation temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("top_p must lie in (0, 1], got {0}")]
    BadTopP(f64),
}

pub type PolicyResult<T> = Result<T, PolicyError>;

/// Sequence generation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    /// Softmax temperature. Values at or below [`GREEDY_TEMPERATURE`] decode
    /// greedily (argmax, lowest token id on ties).
    pub temperature: f64,
    /// Nucleus mass: sampling keeps the smallest set of highest-probability
    /// tokens whose cumulative probability reaches `top_p` (the token that
    /// crosses the threshold is included), renormalized.
    pub top_p: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> PolicyResult<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(PolicyError::BadTemperature(self.temperature));
        }
        if !self.top_p.is_finite() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(PolicyError::BadTopP(self.top_p));
        }
        Ok(())
    }
}

/// One generated response together with the prompt prefix that conditioned it.
///
/// `tokens` holds response tokens only; the prompt encoding is kept in
/// `prompt_tokens` so that response length (and anything derived from it,
/// like the length reward) never counts prompt tokens. If EOS was emitted it
/// is the final element of `tokens`; a sequence that hit `max_len` first has
/// no EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    /// Identifier of the prompt this response answers.
    pub prompt_id: String,
    /// Prompt encoding: the tokens that seeded the autoregressive context.
    pub prompt_tokens: Vec<TokenId>,
    /// Response tokens, including the terminating EOS when one was emitted.
    pub tokens: Vec<TokenId>,
}

impl TokenSequence {
    /// Response length `L_y` in tokens: EOS included, prompt tokens excluded.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Log-probability of a response under a policy, per token and summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogProb {
    /// `per_token[t]` = log softmax probability of response token `t` given
    /// its context.
    pub per_token: Vec<f64>,
    /// Sum of `per_token`.
    pub total: f64,
}

/// Numerically stable softmax via max subtraction. Input must be finite.
pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax via max subtraction.
pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|&x| x - lse).collect()
}

/// Shannon entropy of a probability vector, in nats. Zero entries contribute
/// zero (the `p ln p -> 0` limit).
pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// The full policy state: a logit table plus the dimensions that interpret it.
///
/// Fields are public for inspection and for the optimizer's update path;
/// construct through [`PolicyParams::zeros`], [`PolicyParams::random_init`]
/// or [`PolicyParams::from_logits`], which validate dimensions and finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    /// Vocabulary size (EOS included).
    pub vocab_size: usize,
    /// Number of preceding tokens that form the context.
    pub context_order: usize,
    /// Maximum response length in tokens; generation truncates here.
    pub max_len: usize,
    /// Dedicated end-of-sequence token.
    pub eos_token: TokenId,
    /// Logit table, `vocab_size.pow(context_order)` rows by `vocab_size`
    /// columns. Row layout: see [`PolicyParams::context_row`].
    pub logits: Array2<f64>,
}

impl PolicyParams {
    fn table_rows(vocab_size: usize, context_order: usize) -> PolicyResult<usize> {
        let entries = (vocab_size as u64)
            .checked_pow(context_order as u32 + 1)
            .unwrap_or(u64::MAX);
        if entries > MAX_TABLE_ENTRIES {
            return Err(PolicyError::TableTooLarge {
                entries,
                vocab_size,
                context_order,
                cap: MAX_TABLE_ENTRIES,
            });
        }
        Ok((entries / vocab_size as u64) as usize)
    }

    /// Checks that a `(vocab_size, context_order)` pair fits the logit-table
    /// cap without building the table, returning the entry count.
    pub fn table_entries(vocab_size: usize, context_order: usize) -> PolicyResult<u64> {
        Self::table_rows(vocab_size, context_order).map(|rows| rows as u64 * vocab_size as u64)
    }

    fn check_dims(
        vocab_size: usize,
        context_order: usize,
        max_len: usize,
        eos_token: TokenId,
    ) -> PolicyResult<usize> {
        if vocab_size < 2 {
            return Err(PolicyError::VocabTooSmall(vocab_size));
        }
        if eos_token >= vocab_size {
            return Err(PolicyError::EosOutOfRange {
                eos: eos_token,
                vocab_size,
            });
        }
        if max_len == 0 {
            return Err(PolicyError::ZeroMaxLen);
        }
        Self::table_rows(vocab_size, context_order)
    }

    /// Uniform policy: every logit zero, so every next-token distribution is
    /// uniform over the vocabulary.
    pub fn zeros(
        vocab_size: usize,
        context_order: usize,
        max_len: usize,
        eos_token: TokenId,
    ) -> PolicyResult<Self> {
        let rows = Self::check_dims(vocab_size, context_order, max_len, eos_token)?;
        Ok(Self {
            vocab_size,
            context_order,
            max_len,
            eos_token,
            logits: Array2::zeros((rows, vocab_size)),
        })
    }

    /// Policy with logits drawn uniformly from `[-scale, scale]`, seeded.
    /// `scale = 0` reproduces [`PolicyParams::zeros`].
    pub fn random_init(
        vocab_size: usize,
        context_order: usize,
        max_len: usize,
        eos_token: TokenId,
        scale: f64,
        seed: u64,
    ) -> PolicyResult<Self> {
        if !scale.is_finite() || scale < 0.0 {
            return Err(PolicyError::BadInitScale(scale));
        }
        let mut params = Self::zeros(vocab_size, context_order, max_len, eos_token)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in params.logits.iter_mut() {
            *x = (rng.random::<f64>() * 2.0 - 1.0) * scale;
        }
        Ok(params)
    }

    /// Wraps an existing logit table, validating shape and finiteness.
    pub fn from_logits(
        logits: Array2<f64>,
        context_order: usize,
        max_len: usize,
        eos_token: TokenId,
    ) -> PolicyResult<Self> {
        let vocab_size = logits.ncols();
        let rows = Self::check_dims(vocab_size, context_order, max_len, eos_token)?;
        if logits.nrows() != rows {
            return Err(PolicyError::ShapeMismatch {
                rows: logits.nrows(),
                cols: logits.ncols(),
                expected_rows: rows,
                vocab_size,
                context_order,
            });
        }
        for ((row, col), &x) in logits.indexed_iter() {
            if !x.is_finite() {
                return Err(PolicyError::NonFiniteLogit { row, col });
            }
        }
        Ok(Self {
            vocab_size,
            context_order,
            max_len,
            eos_token,
            logits,
        })
    }

    /// Deep copy of the current parameters, used as the frozen behaviour /
    /// reference policy for a training step.
    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    /// Number of context rows in the logit table.
    pub fn context_rows(&self) -> usize {
        self.logits.nrows()
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> PolicyResult<()> {
        for (position, &token) in tokens.iter().enumerate() {
            if token >= self.vocab_size {
                return Err(PolicyError::TokenOutOfRange {
                    token,
                    position,
                    vocab_size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Row index for the context preceding the next response token, given the
    /// prompt encoding and the response emitted so far.
    ///
    /// The context is the last `context_order` tokens of
    /// `prompt ++ response`, left-padded with EOS before the sequence start,
    /// encoded base-`vocab_size` with the oldest token in the highest digit.
    pub fn context_row(&self, prompt: &[TokenId], response: &[TokenId]) -> usize {
        let total = prompt.len() + response.len();
        let mut row = 0usize;
        for offset in (1..=self.context_order).rev() {
            let tok = if offset > total {
                self.eos_token
            } else {
                let pos = total - offset;
                if pos < prompt.len() {
                    prompt[pos]
                } else {
                    response[pos - prompt.len()]
                }
            };
            row = row * self.vocab_size + tok;
        }
        row
    }

    /// Next-token log-probabilities at a context row (temperature 1,
    /// untruncated).
    pub fn log_softmax_row(&self, row: usize) -> Vec<f64> {
        let z: Vec<f64> = self.logits.row(row).iter().copied().collect();
        log_softmax(&z)
    }

    /// Next-token probabilities at a context row (temperature 1, untruncated).
    pub fn softmax_row(&self, row: usize) -> Vec<f64> {
        let z: Vec<f64> = self.logits.row(row).iter().copied().collect();
        softmax(&z)
    }

    /// The (context row, emitted token) pair for every response position, in
    /// order. This is the visitation record that log-probabilities, gradients
    /// and entropies are all computed over.
    pub fn visited_contexts(&self, seq: &TokenSequence) -> PolicyResult<Vec<(usize, TokenId)>> {
        self.check_tokens(&seq.prompt_tokens)?;
        self.check_tokens(&seq.tokens)?;
        Ok((0..seq.tokens.len())
            .map(|t| {
                (
                    self.context_row(&seq.prompt_tokens, &seq.tokens[..t]),
                    seq.tokens[t],
                )
            })
            .collect())
    }

    /// Samples one response conditioned on a prompt encoding.
    ///
    /// Tokens are drawn from the temperature-scaled, nucleus-truncated
    /// softmax until EOS is emitted or `max_len` tokens have been produced.
    ///
    /// # Arguments
    ///
    /// * `prompt_id` - identifier copied into the returned sequence.
    /// * `prompt_tokens` - prompt encoding that seeds the context window.
    /// * `gen` - temperature and nucleus mass.
    /// * `rng` - source of randomness; seeding this makes sampling
    ///   reproducible.
    ///
    /// # Errors
    ///
    /// Rejects invalid generation parameters and out-of-vocabulary prompt
    /// tokens.
    pub fn sample_sequence<R: Rng>(
        &self,
        prompt_id: &str,
        prompt_tokens: &[TokenId],
        gen: &GenParams,
        rng: &mut R,
    ) -> PolicyResult<TokenSequence> {
        gen.validate()?;
        self.check_tokens(prompt_tokens)?;
        let mut tokens: Vec<TokenId> = Vec::new();
        for _ in 0..self.max_len {
            let row = self.context_row(prompt_tokens, &tokens);
            let tok = self.draw_token(row, gen, rng);
            tokens.push(tok);
            if tok == self.eos_token {
                break;
            }
        }
        Ok(TokenSequence {
            prompt_id: prompt_id.to_string(),
            prompt_tokens: prompt_tokens.to_vec(),
            tokens,
        })
    }

    fn draw_token<R: Rng>(&self, row: usize, gen: &GenParams, rng: &mut R) -> TokenId {
        if gen.temperature <= GREEDY_TEMPERATURE {
            // Zero-temperature limit: argmax, ties to the lowest token id.
            let logits = self.logits.row(row);
            let mut best = 0usize;
            for j in 1..self.vocab_size {
                if logits[j] > logits[best] {
                    best = j;
                }
            }
            return best;
        }
        let scaled: Vec<f64> = self
            .logits
            .row(row)
            .iter()
            .map(|z| z / gen.temperature)
            .collect();
        let probs = softmax(&scaled);
        // Nucleus order: probability descending, token id ascending on ties,
        // so the kept set (and therefore the sampling distribution) is a
        // deterministic function of the logits.
        let mut order: Vec<usize> = (0..self.vocab_size).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        let mut kept = self.vocab_size;
        let mut mass = 0.0;
        for (rank, &idx) in order.iter().enumerate() {
            mass += probs[idx];
            if mass >= gen.top_p {
                kept = rank + 1;
                break;
            }
        }
        // Scaling the uniform draw by the kept mass renormalizes without
        // touching the probabilities themselves.
        let u = rng.random::<f64>() * mass.min(1.0);
        let mut cum = 0.0;
        for &idx in &order[..kept] {
            cum += probs[idx];
            if u < cum {
                return idx;
            }
        }
        order[kept - 1]
    }

    /// Log-probability of a response under this policy at temperature 1 with
    /// no nucleus truncation, regardless of how the response was sampled.
    pub fn sequence_logprob(&self, seq: &TokenSequence) -> PolicyResult<SequenceLogProb> {
        let contexts = self.visited_contexts(seq)?;
        let mut per_token = Vec::with_capacity(contexts.len());
        for &(row, tok) in &contexts {
            per_token.push(self.log_softmax_row(row)[tok]);
        }
        let total = per_token.iter().sum();
        Ok(SequenceLogProb { per_token, total })
    }

    /// Analytic gradient of [`PolicyParams::sequence_logprob`]'s total with
    /// respect to every logit: `one_hot(token) - softmax(context)` accumulated
    /// into each visited row. Rows never visited stay exactly zero.
    pub fn logprob_gradient(&self, seq: &TokenSequence) -> PolicyResult<Array2<f64>> {
        let mut grad = Array2::zeros(self.logits.dim());
        for (row, tok) in self.visited_contexts(seq)? {
            let p = self.softmax_row(row);
            for (j, &pj) in p.iter().enumerate() {
                grad[(row, j)] -= pj;
            }
            grad[(row, tok)] += 1.0;
        }
        Ok(grad)
    }

    /// Mean per-token Shannon entropy (nats) of the next-token distributions
    /// at every context visited by the batch. An empty batch (no tokens at
    /// all) reports zero.
    pub fn policy_entropy(&self, batch: &[TokenSequence]) -> PolicyResult<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in batch {
            for (row, _) in self.visited_contexts(seq)? {
                total += entropy_of(&self.softmax_row(row));
                count += 1;
            }
        }
        Ok(if count == 0 {
            0.0
        } else {
            total / count as f64
        })
    }
}
