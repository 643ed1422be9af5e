//! Reward composition: verifier accuracy plus an efficient-length bonus.
//!
//! The length term rewards finishing under a budget with a clipped linear
//! ramp,
//!
//! ```text
//! r_len(L) = clamp(alpha * (L_budget - L) + delta, 0, 1)
//! ```
//!
//! so it is `delta` exactly at the budget, saturates at 1 once the response
//! is `(1 - delta) / alpha` tokens under budget, and hits 0 once it runs
//! `delta / alpha` tokens over. Between the saturation points it falls
//! linearly, which keeps the pressure toward shorter correct responses gentle
//! and bounded — clipping means one over-long outlier costs at most the
//! delta-sized bonus.
//!
//! The total reward is additive: `r_total = r_acc + weight * r_len`, with
//! `r_acc` the binary verifier verdict. When the length term is disabled the
//! breakdown records `r_len = 0` and the total collapses to plain accuracy.
//!
//! Default `alpha`/`delta` keep the published ramp shape (a 0.005 slope
//! around the budget); desk-scale stages usually override `alpha` upward so
//! the ramp spans toy response lengths, and `l_budget` defaults to the toy
//! maximum of 32 tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{self, EnvError, Prompt};
use crate::policy::TokenSequence;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("alpha must be finite and positive, got {0}")]
    BadAlpha(f64),
    #[error("delta must lie in [0, 1], got {0}")]
    BadDelta(f64),
    #[error("l_budget must be at least 1")]
    ZeroBudget,
    #[error("weight must be finite and non-negative, got {0}")]
    BadWeight(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type RewardResult<T> = Result<T, RewardError>;

/// Efficient-length reward configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthRewardConfig {
    /// Whether the length term participates in the total reward at all.
    pub enabled: bool,
    /// Slope of the ramp per token under/over budget.
    pub alpha: f64,
    /// Reward exactly at the budget; also fixes where the ramp saturates.
    pub delta: f64,
    /// Target response length in tokens.
    pub l_budget: usize,
    /// Weight of the length term inside the total reward.
    pub weight: f64,
}

impl Default for LengthRewardConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha: 0.005,
            delta: 0.5,
            l_budget: 32,
            weight: 0.5,
        }
    }
}

impl LengthRewardConfig {
    pub fn validate(&self) -> RewardResult<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(RewardError::BadAlpha(self.alpha));
        }
        if !self.delta.is_finite() || !(0.0..=1.0).contains(&self.delta) {
            return Err(RewardError::BadDelta(self.delta));
        }
        if self.l_budget == 0 {
            return Err(RewardError::ZeroBudget);
        }
        if !self.weight.is_finite() || self.weight < 0.0 {
            return Err(RewardError::BadWeight(self.weight));
        }
        Ok(())
    }
}

/// Per-rollout reward record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Verifier verdict: 0.0 or 1.0.
    pub r_acc: f64,
    /// Length reward in `[0, 1]`; 0 when the length term is disabled.
    pub r_len: f64,
    /// `r_acc + weight * r_len` (weight 0 when disabled).
    pub r_total: f64,
}

/// The clipped linear length reward for a response of `response_len` tokens
/// (`L_y`: response tokens only, EOS included, prompt encoding excluded).
pub fn length_reward(cfg: &LengthRewardConfig, response_len: usize) -> f64 {
    let raw = cfg.alpha * (cfg.l_budget as f64 - response_len as f64) + cfg.delta;
    raw.clamp(0.0, 1.0)
}

/// Scores a rollout: runs the verifier and composes the total reward.
///
/// # Errors
///
/// Propagates verifier errors (prompt mismatch, payload mismatch).
pub fn total_reward(
    prompt: &Prompt,
    seq: &TokenSequence,
    cfg: &LengthRewardConfig,
) -> RewardResult<RewardBreakdown> {
    let r_acc = f64::from(envs::verify(prompt, seq)?);
    if !cfg.enabled {
        return Ok(RewardBreakdown {
            r_acc,
            r_len: 0.0,
            r_total: r_acc,
        });
    }
    let r_len = length_reward(cfg, seq.len());
    Ok(RewardBreakdown {
        r_acc,
        r_len,
        r_total: r_acc + cfg.weight * r_len,
    })
}
