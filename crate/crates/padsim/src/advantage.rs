//! Group-relative advantage estimation.
//!
//! Rollouts are grouped by prompt; each rollout's advantage is its total
//! reward standardized against its own group,
//!
//! ```text
//! A_i = (r_i - mean(r)) / (std_pop(r) + eps)
//! ```
//!
//! with the population standard deviation (divide by G, not G - 1) and a
//! small stabilizer added to it. No critic is involved: the group itself is
//! the baseline.
//!
//! A group whose rewards are all identical carries no signal — there is
//! nothing to rank — and its advantages are *exactly* zero, not merely small:
//! the all-equal case short-circuits before any floating-point subtraction,
//! so downstream consumers can rely on bitwise zeros. This is the gradient
//! stagnation the distillation module exists to fight: zero-advantage
//! rollouts dilute a batch without moving the policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::TokenSequence;
use crate::rewards::RewardBreakdown;

/// Default stabilizer added to the population standard deviation.
pub const DEFAULT_EPS_STABILITY: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AdvantageError {
    #[error("degenerate group '{prompt_id}': need at least 2 rollouts, got {size}")]
    DegenerateGroup { prompt_id: String, size: usize },
    #[error("eps_stability must be finite and positive, got {0}")]
    BadEps(f64),
    #[error("rollout reward in group '{prompt_id}' is not finite: {value}")]
    NonFiniteReward { prompt_id: String, value: f64 },
}

pub type AdvantageResult<T> = Result<T, AdvantageError>;

/// One sampled response with everything the optimizer needs to know about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// The generated sequence (with its conditioning prompt tokens).
    pub seq: TokenSequence,
    /// Log-probability of each response token under the behaviour policy at
    /// generation time; importance ratios are computed against these.
    pub behavior_logprob_per_token: Vec<f64>,
    /// Reward breakdown from the verifier and length term.
    pub reward: RewardBreakdown,
    /// Group-relative advantage; zero until filled by this module.
    pub advantage: f64,
}

/// All rollouts generated for one prompt in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Prompt the rollouts answer.
    pub prompt_id: String,
    /// The G rollouts of the group.
    pub rollouts: Vec<Rollout>,
}

impl Group {
    /// Group size G.
    pub fn size(&self) -> usize {
        self.rollouts.len()
    }
}

/// Fills every rollout's advantage from its group statistics.
///
/// # Errors
///
/// A group of fewer than two rollouts is degenerate (its only reward is its
/// own mean), and non-finite rewards or a non-positive `eps` are rejected.
pub fn estimate_advantages(group: &mut Group, eps: f64) -> AdvantageResult<()> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(AdvantageError::BadEps(eps));
    }
    let g = group.size();
    if g < 2 {
        return Err(AdvantageError::DegenerateGroup {
            prompt_id: group.prompt_id.clone(),
            size: g,
        });
    }
    for r in &group.rollouts {
        if !r.reward.r_total.is_finite() {
            return Err(AdvantageError::NonFiniteReward {
                prompt_id: group.prompt_id.clone(),
                value: r.reward.r_total,
            });
        }
    }
    let first = group.rollouts[0].reward.r_total;
    if group.rollouts.iter().all(|r| r.reward.r_total == first) {
        // Uniform rewards: exactly zero by definition, bypassing float
        // arithmetic entirely.
        for r in &mut group.rollouts {
            r.advantage = 0.0;
        }
        return Ok(());
    }
    let n = g as f64;
    let mean = group.rollouts.iter().map(|r| r.reward.r_total).sum::<f64>() / n;
    let var = group
        .rollouts
        .iter()
        .map(|r| {
            let d = r.reward.r_total - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let denom = var.sqrt() + eps;
    for r in &mut group.rollouts {
        r.advantage = (r.reward.r_total - mean) / denom;
    }
    Ok(())
}

/// Estimates every group in place and returns the advantages flattened in
/// group order, aligned with `groups.iter().flat_map(|g| &g.rollouts)`.
pub fn batch_advantages(groups: &mut [Group], eps: f64) -> AdvantageResult<Vec<f64>> {
    let mut flat = Vec::with_capacity(groups.iter().map(Group::size).sum());
    for group in groups.iter_mut() {
        estimate_advantages(group, eps)?;
        flat.extend(group.rollouts.iter().map(|r| r.advantage));
    }
    Ok(flat)
}
