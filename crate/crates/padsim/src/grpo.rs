//! Group-relative policy optimization: the clipped-ratio surrogate, its exact
//! gradient for the tabular policy, the k3 KL penalty against a frozen
//! reference, an annealed entropy bonus, and the gradient-descent update.
//!
//! The surrogate for a selected batch of `G` rollouts is
//!
//! ```text
//! L = -(1/G) sum_i (1/|y_i|) sum_t min(rho_it * A_i, clip(rho_it, 1-eps, 1+eps) * A_i)
//! ```
//!
//! where `rho_it = exp(logprob_current - logprob_behavior)` uses the
//! **stored** behavior log-probabilities from rollout time — never a
//! recomputation — and `A_i` is the group-relative advantage broadcast over
//! the sequence. A token is *clip-active* when the clamp binds pessimistically
//! (`A > 0` and `rho > 1+eps`, or `A < 0` and `rho < 1-eps`); its gradient is
//! exactly zero. Otherwise the objective term differentiates to
//! `A * rho * (onehot(y) - softmax(context))` through the log-ratio.
//!
//! The KL penalty is the k3 estimator `k = e^d - d - 1` with
//! `d = logprob_ref - logprob_current`, which is pointwise nonnegative and
//! unbiased for `KL(pi_theta || pi_ref)` under samples from the current
//! policy. The entropy bonus subtracts `beta * H(pi_theta)` from the loss,
//! with `beta` held at `beta0` through a warmup and decayed geometrically
//! afterwards.
//!
//! Updates are plain gradient descent on the composed loss with global-norm
//! gradient clipping.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::Rollout;
use crate::pad::DistilledBatch;
use crate::policy::{PolicyError, PolicyParams};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("clip epsilon must lie in (0, 1), got {0}")]
    BadClipEps(f64),
    #[error("kl coefficient must be finite and nonnegative, got {0}")]
    BadKlCoef(f64),
    #[error("learning rate must be finite and positive, got {0}")]
    BadLearningRate(f64),
    #[error("max gradient norm must be finite and positive, got {0}")]
    BadMaxGradNorm(f64),
    #[error(
        "entropy schedule invalid: beta0 {beta0}, beta_min {beta_min}, decay {decay_lambda} \
         (need 0 <= beta_min <= beta0 and 0 < decay_lambda <= 1)"
    )]
    BadEntropySchedule {
        beta0: f64,
        beta_min: f64,
        decay_lambda: f64,
    },
    #[error(
        "rollout {index} stores {stored} behavior log-probabilities for {tokens} response tokens"
    )]
    BehaviorLengthMismatch {
        index: usize,
        stored: usize,
        tokens: usize,
    },
    #[error("gradient shape {got:?} does not match the logit table {expected:?}")]
    GradientShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("reference policy table {got:?} does not match the current table {expected:?}")]
    ReferenceShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("kl penalty is enabled but no reference policy was provided")]
    MissingReference,
    #[error("empty distilled batch: the step should be skipped, not optimized")]
    EmptyBatch,
    #[error("importance ratio for rollout {index} token {token} is not finite ({ratio})")]
    NonFiniteRatio {
        index: usize,
        token: usize,
        ratio: f64,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

pub type GrpoResult<T> = Result<T, GrpoError>;

/// Entropy-bonus coefficient schedule: constant `beta0` for `warmup_steps`,
/// then `max(beta_min, beta0 * decay_lambda^(step - warmup_steps))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropySchedule {
    /// Coefficient during warmup.
    pub beta0: f64,
    /// Floor the decay never goes below.
    pub beta_min: f64,
    /// Geometric decay factor applied once per post-warmup step.
    pub decay_lambda: f64,
    /// Steps before the decay starts.
    pub warmup_steps: usize,
}

impl Default for EntropySchedule {
    fn default() -> Self {
        Self {
            beta0: 0.02,
            beta_min: 0.0,
            decay_lambda: 0.985,
            warmup_steps: 140,
        }
    }
}

impl EntropySchedule {
    pub fn validate(&self) -> GrpoResult<()> {
        let ok = self.beta0.is_finite()
            && self.beta_min.is_finite()
            && self.decay_lambda.is_finite()
            && self.beta0 >= 0.0
            && (0.0..=self.beta0).contains(&self.beta_min)
            && self.decay_lambda > 0.0
            && self.decay_lambda <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(GrpoError::BadEntropySchedule {
                beta0: self.beta0,
                beta_min: self.beta_min,
                decay_lambda: self.decay_lambda,
            })
        }
    }

    /// Coefficient at a training step.
    pub fn coef(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.beta0
        } else {
            let decayed = self.beta0 * self.decay_lambda.powi((step - self.warmup_steps) as i32);
            decayed.max(self.beta_min)
        }
    }
}

/// Whether importance ratios are formed per token or once per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RatioLevel {
    /// One ratio per response token; the advantage is broadcast. The default.
    #[default]
    Token,
    /// One ratio per sequence: the product of the token ratios.
    Sequence,
}

/// Optimizer configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    /// Clipping half-width for the importance ratio.
    pub clip_eps: f64,
    /// Weight of the k3 KL penalty when enabled.
    pub kl_coef: f64,
    /// Whether the KL penalty is applied (a reference policy is then
    /// required).
    pub kl_enabled: bool,
    /// Entropy-bonus schedule.
    pub entropy: EntropySchedule,
    /// Gradient-descent step size.
    pub learning_rate: f64,
    /// Global gradient-norm ceiling.
    pub max_grad_norm: f64,
    /// Token-level or sequence-level importance ratios.
    pub ratio_level: RatioLevel,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_coef: 0.002,
            kl_enabled: false,
            entropy: EntropySchedule::default(),
            learning_rate: 0.1,
            max_grad_norm: 1.0,
            ratio_level: RatioLevel::Token,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> GrpoResult<()> {
        if !self.clip_eps.is_finite() || self.clip_eps <= 0.0 || self.clip_eps >= 1.0 {
            return Err(GrpoError::BadClipEps(self.clip_eps));
        }
        if !self.kl_coef.is_finite() || self.kl_coef < 0.0 {
            return Err(GrpoError::BadKlCoef(self.kl_coef));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(GrpoError::BadLearningRate(self.learning_rate));
        }
        if !self.max_grad_norm.is_finite() || self.max_grad_norm <= 0.0 {
            return Err(GrpoError::BadMaxGradNorm(self.max_grad_norm));
        }
        self.entropy.validate()
    }
}

/// Value and logit-table gradient of the clipped surrogate loss.
#[derive(Debug, Clone)]
pub struct SurrogateOutcome {
    /// The loss (negated clipped objective).
    pub loss: f64,
    /// Fraction of ratio terms where clipping pessimistically bound.
    pub clip_fraction: f64,
    /// Mean importance ratio across terms, for diagnostics.
    pub mean_ratio: f64,
    /// d loss / d logits.
    pub gradient: Array2<f64>,
}

/// Value and logit-table gradient of a penalty or bonus term.
#[derive(Debug, Clone)]
pub struct PenaltyOutcome {
    pub value: f64,
    /// d value / d logits.
    pub gradient: Array2<f64>,
}

/// Per-step loss decomposition and optimizer diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    /// Entropy coefficient in force this step.
    pub beta: f64,
    /// KL coefficient in force this step (0 when disabled).
    pub kl_coef: f64,
    /// `surrogate + kl_coef * kl - beta * entropy`.
    pub total: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    /// Global gradient norm before clipping.
    pub grad_norm_pre_clip: f64,
}

/// Result of one optimization step: the updated policy and its report.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: PolicyParams,
    pub report: LossReport,
}

fn check_behavior_lengths(batch: &[Rollout]) -> GrpoResult<()> {
    for (index, r) in batch.iter().enumerate() {
        if r.behavior_logprob_per_token.len() != r.seq.tokens.len() {
            return Err(GrpoError::BehaviorLengthMismatch {
                index,
                stored: r.behavior_logprob_per_token.len(),
                tokens: r.seq.tokens.len(),
            });
        }
    }
    Ok(())
}

/// Clipped surrogate loss and its exact gradient over the logit table.
///
/// Ratios always divide by the **stored** behavior log-probabilities carried
/// in each rollout. Gradients on clip-active terms are exactly zero, and a
/// batch whose advantages are all zero produces an exactly-zero gradient.
pub fn surrogate_loss(
    params: &PolicyParams,
    batch: &[Rollout],
    clip_eps: f64,
    level: RatioLevel,
) -> GrpoResult<SurrogateOutcome> {
    if !clip_eps.is_finite() || clip_eps <= 0.0 || clip_eps >= 1.0 {
        return Err(GrpoError::BadClipEps(clip_eps));
    }
    if batch.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    check_behavior_lengths(batch)?;
    let g = batch.len() as f64;
    let lo = 1.0 - clip_eps;
    let hi = 1.0 + clip_eps;
    let mut loss = 0.0;
    let mut gradient = Array2::zeros(params.logits.dim());
    let mut clipped_terms = 0usize;
    let mut total_terms = 0usize;
    let mut ratio_sum = 0.0;

    for (index, r) in batch.iter().enumerate() {
        let contexts = params.visited_contexts(&r.seq)?;
        if contexts.is_empty() {
            continue;
        }
        let a = r.advantage;
        let len = contexts.len() as f64;
        match level {
            RatioLevel::Token => {
                let w = 1.0 / (g * len);
                for (t, &(row, tok)) in contexts.iter().enumerate() {
                    let lp = params.log_softmax_row(row)[tok];
                    let rho = (lp - r.behavior_logprob_per_token[t]).exp();
                    if !rho.is_finite() {
                        return Err(GrpoError::NonFiniteRatio {
                            index,
                            token: t,
                            ratio: rho,
                        });
                    }
                    let unclipped = rho * a;
                    let clipped = rho.clamp(lo, hi) * a;
                    loss -= w * unclipped.min(clipped);
                    ratio_sum += rho;
                    total_terms += 1;
                    let clip_active = (a > 0.0 && rho > hi) || (a < 0.0 && rho < lo);
                    if clip_active {
                        clipped_terms += 1;
                    } else {
                        // d(-obj)/dz_j = -w * a * rho * (onehot_j - p_j).
                        let coef = w * a * rho;
                        let p = params.softmax_row(row);
                        for (j, &pj) in p.iter().enumerate() {
                            gradient[(row, j)] += coef * pj;
                        }
                        gradient[(row, tok)] -= coef;
                    }
                }
            }
            RatioLevel::Sequence => {
                let current = params.sequence_logprob(&r.seq)?;
                let behavior_total: f64 = r.behavior_logprob_per_token.iter().sum();
                let rho = (current.total - behavior_total).exp();
                if !rho.is_finite() {
                    return Err(GrpoError::NonFiniteRatio {
                        index,
                        token: 0,
                        ratio: rho,
                    });
                }
                let unclipped = rho * a;
                let clipped = rho.clamp(lo, hi) * a;
                loss -= (1.0 / g) * unclipped.min(clipped);
                ratio_sum += rho;
                total_terms += 1;
                let clip_active = (a > 0.0 && rho > hi) || (a < 0.0 && rho < lo);
                if clip_active {
                    clipped_terms += 1;
                } else {
                    // The sequence ratio differentiates through the summed
                    // log-probability: every visited context contributes.
                    let coef = (1.0 / g) * a * rho;
                    for &(row, tok) in &contexts {
                        let p = params.softmax_row(row);
                        for (j, &pj) in p.iter().enumerate() {
                            gradient[(row, j)] += coef * pj;
                        }
                        gradient[(row, tok)] -= coef;
                    }
                }
            }
        }
    }

    let clip_fraction = if total_terms == 0 {
        0.0
    } else {
        clipped_terms as f64 / total_terms as f64
    };
    let mean_ratio = if total_terms == 0 {
        1.0
    } else {
        ratio_sum / total_terms as f64
    };
    Ok(SurrogateOutcome {
        loss,
        clip_fraction,
        mean_ratio,
        gradient,
    })
}

/// k3 KL penalty `mean(e^d - d - 1)` with `d = logprob_ref - logprob_current`,
/// averaged per token within each sequence and then across the batch, plus
/// its exact gradient. Pointwise nonnegative; exactly zero (value and
/// gradient) when the policies coincide.
pub fn kl_penalty(
    params: &PolicyParams,
    reference: &PolicyParams,
    batch: &[Rollout],
) -> GrpoResult<PenaltyOutcome> {
    if reference.logits.dim() != params.logits.dim() {
        return Err(GrpoError::ReferenceShapeMismatch {
            expected: params.logits.dim(),
            got: reference.logits.dim(),
        });
    }
    if batch.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let g = batch.len() as f64;
    let mut value = 0.0;
    let mut gradient = Array2::zeros(params.logits.dim());
    for r in batch {
        let contexts = params.visited_contexts(&r.seq)?;
        if contexts.is_empty() {
            continue;
        }
        let w = 1.0 / (g * contexts.len() as f64);
        for &(row, tok) in &contexts {
            let lp_cur = params.log_softmax_row(row)[tok];
            let lp_ref = reference.log_softmax_row(row)[tok];
            let d = lp_ref - lp_cur;
            value += w * (d.exp() - d - 1.0);
            // dk/dz_j = (1 - e^d) * (onehot_j - p_j).
            let coef = w * (1.0 - d.exp());
            let p = params.softmax_row(row);
            for (j, &pj) in p.iter().enumerate() {
                gradient[(row, j)] -= coef * pj;
            }
            gradient[(row, tok)] += coef;
        }
    }
    Ok(PenaltyOutcome { value, gradient })
}

/// Mean policy entropy over the visited contexts of a batch, with its exact
/// gradient `dH/dz_j = -p_j (ln p_j + H)` per context row.
pub fn entropy_bonus(params: &PolicyParams, batch: &[Rollout]) -> GrpoResult<PenaltyOutcome> {
    if batch.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let g = batch.len() as f64;
    let mut value = 0.0;
    let mut gradient = Array2::zeros(params.logits.dim());
    for r in batch {
        let contexts = params.visited_contexts(&r.seq)?;
        if contexts.is_empty() {
            continue;
        }
        let w = 1.0 / (g * contexts.len() as f64);
        for &(row, _) in &contexts {
            let p = params.softmax_row(row);
            let lp = params.log_softmax_row(row);
            let h: f64 = p
                .iter()
                .zip(&lp)
                .map(|(&pj, &lpj)| if pj > 0.0 { -pj * lpj } else { 0.0 })
                .sum();
            value += w * h;
            for (j, (&pj, &lpj)) in p.iter().zip(&lp).enumerate() {
                gradient[(row, j)] += w * (-pj * (lpj + h));
            }
        }
    }
    Ok(PenaltyOutcome { value, gradient })
}

/// Applies one gradient-descent step with global-norm clipping. Returns the
/// updated policy and the pre-clip gradient norm.
pub fn apply_update(
    params: &PolicyParams,
    gradient: &Array2<f64>,
    learning_rate: f64,
    max_grad_norm: f64,
) -> GrpoResult<(PolicyParams, f64)> {
    if !learning_rate.is_finite() || learning_rate <= 0.0 {
        return Err(GrpoError::BadLearningRate(learning_rate));
    }
    if !max_grad_norm.is_finite() || max_grad_norm <= 0.0 {
        return Err(GrpoError::BadMaxGradNorm(max_grad_norm));
    }
    if gradient.dim() != params.logits.dim() {
        return Err(GrpoError::GradientShapeMismatch {
            expected: params.logits.dim(),
            got: gradient.dim(),
        });
    }
    let norm = gradient.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let scale = if norm > max_grad_norm {
        max_grad_norm / norm
    } else {
        1.0
    };
    let logits = &params.logits - &(gradient * (learning_rate * scale));
    let updated = PolicyParams::from_logits(
        logits,
        params.context_order,
        params.max_len,
        params.eos_token,
    )?;
    Ok((updated, norm))
}

/// One full optimization step on a distilled batch: surrogate, optional KL
/// penalty, annealed entropy bonus, gradient clipping, parameter update.
///
/// # Errors
///
/// An empty batch is an error here — the trainer is expected to skip the
/// step instead of calling this. KL needs a reference policy when enabled.
pub fn grpo_step(
    params: &PolicyParams,
    reference: Option<&PolicyParams>,
    distilled: &DistilledBatch,
    cfg: &GrpoConfig,
    step: usize,
) -> GrpoResult<StepOutcome> {
    cfg.validate()?;
    if distilled.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let batch = &distilled.selected;
    let surrogate = surrogate_loss(params, batch, cfg.clip_eps, cfg.ratio_level)?;
    let beta = cfg.entropy.coef(step);
    let entropy = entropy_bonus(params, batch)?;
    let (kl_value, kl_coef, kl_gradient) = if cfg.kl_enabled {
        let reference = reference.ok_or(GrpoError::MissingReference)?;
        let kl = kl_penalty(params, reference, batch)?;
        (kl.value, cfg.kl_coef, Some(kl.gradient))
    } else {
        (0.0, 0.0, None)
    };

    let mut gradient = surrogate.gradient;
    if let Some(kl_grad) = kl_gradient {
        gradient += &(&kl_grad * kl_coef);
    }
    gradient -= &(&entropy.gradient * beta);

    let total = surrogate.loss + kl_coef * kl_value - beta * entropy.value;
    let (updated, grad_norm_pre_clip) =
        apply_update(params, &gradient, cfg.learning_rate, cfg.max_grad_norm)?;
    Ok(StepOutcome {
        params: updated,
        report: LossReport {
            surrogate: surrogate.loss,
            kl: kl_value,
            entropy: entropy.value,
            beta,
            kl_coef,
            total,
            clip_fraction: surrogate.clip_fraction,
            mean_ratio: surrogate.mean_ratio,
            grad_norm_pre_clip,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{GenParams, TokenSequence};
    use crate::rewards::RewardBreakdown;
    use crate::seeding::rng_for;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_policy(seed: u64) -> PolicyParams {
        PolicyParams::random_init(4, 1, 6, 3, 0.7, seed).unwrap()
    }

    /// Samples rollouts from `behavior`, storing its per-token logprobs, and
    /// attaches the given advantages.
    fn sampled_batch(behavior: &PolicyParams, advantages: &[f64], seed: u64) -> Vec<Rollout> {
        let mut rng = rng_for(seed, &[]);
        let gen = GenParams {
            temperature: 1.0,
            top_p: 1.0,
        };
        advantages
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let seq = behavior
                    .sample_sequence(&format!("p{i}"), &[], &gen, &mut rng)
                    .unwrap();
                let lp = behavior.sequence_logprob(&seq).unwrap();
                Rollout {
                    seq,
                    behavior_logprob_per_token: lp.per_token,
                    reward: RewardBreakdown {
                        r_acc: 0.0,
                        r_len: 0.0,
                        r_total: 0.0,
                    },
                    advantage: a,
                }
            })
            .collect()
    }

    /// One-token rollout whose importance ratio under `params` is exactly
    /// `rho`: the stored behavior logprob is `lp_current - ln(rho)`.
    fn rollout_with_ratio(params: &PolicyParams, rho: f64, advantage: f64) -> Rollout {
        let seq = TokenSequence {
            prompt_id: "fixed".to_string(),
            prompt_tokens: vec![],
            tokens: vec![params.eos_token],
        };
        let lp = params.sequence_logprob(&seq).unwrap().per_token[0];
        Rollout {
            seq,
            behavior_logprob_per_token: vec![lp - rho.ln()],
            reward: RewardBreakdown {
                r_acc: 0.0,
                r_len: 0.0,
                r_total: 0.0,
            },
            advantage,
        }
    }

    fn numeric_gradient<F: Fn(&PolicyParams) -> f64>(
        params: &PolicyParams,
        f: F,
        h: f64,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(params.logits.dim());
        for row in 0..params.logits.nrows() {
            for col in 0..params.logits.ncols() {
                let mut plus = params.clone();
                plus.logits[(row, col)] += h;
                let mut minus = params.clone();
                minus.logits[(row, col)] -= h;
                grad[(row, col)] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
        }
        grad
    }

    fn relative_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
        diff / scale.max(1e-12)
    }

    #[test]
    fn unit_ratios_reduce_the_objective_to_the_advantage() {
        // Behavior policy == current policy, so every ratio is exactly 1 and
        // the per-sequence objective is exactly A_i: loss = -mean(A).
        let params = tiny_policy(3);
        let advantages = [0.8, -0.3, 1.4, 0.0];
        let batch = sampled_batch(&params, &advantages, 11);
        let out = surrogate_loss(&params, &batch, 0.2, RatioLevel::Token).unwrap();
        let expect = -advantages.iter().sum::<f64>() / advantages.len() as f64;
        assert!((out.loss - expect).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 0.0);
        assert!((out.mean_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_clipping_examples() {
        let params = tiny_policy(5);
        // rho = 1.5, eps = 0.2, A = 1: min(1.5, 1.2) = 1.2, clip-active,
        // gradient exactly zero.
        let batch = vec![rollout_with_ratio(&params, 1.5, 1.0)];
        let out = surrogate_loss(&params, &batch, 0.2, RatioLevel::Token).unwrap();
        assert!((out.loss - (-1.2)).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 1.0);
        assert!(out.gradient.iter().all(|&x| x == 0.0));

        // rho = 0.5, A = -1: min(-0.5, -0.8) = -0.8, clip-active.
        let batch = vec![rollout_with_ratio(&params, 0.5, -1.0)];
        let out = surrogate_loss(&params, &batch, 0.2, RatioLevel::Token).unwrap();
        assert!((out.loss - 0.8).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 1.0);
        assert!(out.gradient.iter().all(|&x| x == 0.0));

        // rho = 0.5, A = +1: the clamp binds but *optimistically*;
        // min(0.5, 0.8) = 0.5 keeps the unclipped branch and its gradient.
        let batch = vec![rollout_with_ratio(&params, 0.5, 1.0)];
        let out = surrogate_loss(&params, &batch, 0.2, RatioLevel::Token).unwrap();
        assert!((out.loss - (-0.5)).abs() < 1e-12);
        assert_eq!(out.clip_fraction, 0.0);
        assert!(out.gradient.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn zero_advantage_batches_have_exactly_zero_gradient() {
        let params = tiny_policy(7);
        let behavior = tiny_policy(8);
        let batch = sampled_batch(&behavior, &[0.0, 0.0, 0.0], 13);
        let out = surrogate_loss(&params, &batch, 0.2, RatioLevel::Token).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(
            out.gradient.iter().all(|&x| x == 0.0),
            "exact zeros, not epsilon"
        );
        let out = surrogate_loss(&params, &batch, 0.2, RatioLevel::Sequence).unwrap();
        assert!(out.gradient.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        // Behavior differs from the evaluated policy, so ratios vary. The
        // min/clamp kinks are measure-zero; reject draws that land within
        // 1e-3 of a kink so central differences stay valid.
        let mut checked = 0;
        for seed in 0..12u64 {
            let params = tiny_policy(100 + seed);
            let behavior = tiny_policy(200 + seed);
            let advantages = [1.3, -0.9, 0.4, -1.7];
            let batch = sampled_batch(&behavior, &advantages, 300 + seed);
            let near_kink = batch.iter().any(|r| {
                let contexts = params.visited_contexts(&r.seq).unwrap();
                contexts.iter().enumerate().any(|(t, &(row, tok))| {
                    let lp = params.log_softmax_row(row)[tok];
                    let rho = (lp - r.behavior_logprob_per_token[t]).exp();
                    (rho - 0.8).abs() < 1e-3 || (rho - 1.2).abs() < 1e-3
                })
            });
            if near_kink {
                continue;
            }
            for level in [RatioLevel::Token, RatioLevel::Sequence] {
                let out = surrogate_loss(&params, &batch, 0.2, level).unwrap();
                let numeric = numeric_gradient(
                    &params,
                    |p| surrogate_loss(p, &batch, 0.2, level).unwrap().loss,
                    1e-6,
                );
                let rel = relative_frobenius(&out.gradient, &numeric);
                assert!(rel < 1e-4, "seed {seed} {level:?}: relative error {rel}");
            }
            checked += 1;
        }
        assert!(checked >= 6, "too many draws rejected near clip kinks");
    }

    #[test]
    fn sequence_and_token_levels_agree_on_one_token_rollouts() {
        let params = tiny_policy(21);
        let batch = vec![
            rollout_with_ratio(&params, 1.1, 0.9),
            rollout_with_ratio(&params, 0.95, -1.2),
        ];
        let tok = surrogate_loss(&params, &batch, 0.2, RatioLevel::Token).unwrap();
        let seq = surrogate_loss(&params, &batch, 0.2, RatioLevel::Sequence).unwrap();
        assert!((tok.loss - seq.loss).abs() < 1e-12);
        assert!(relative_frobenius(&tok.gradient, &seq.gradient) < 1e-12);
    }

    #[test]
    fn k3_is_pointwise_nonnegative_and_zero_at_coincidence() {
        let params = tiny_policy(31);
        let reference = tiny_policy(32);
        let batch = sampled_batch(&params, &[1.0, -1.0, 0.5, 0.2, -0.7], 33);
        let out = kl_penalty(&params, &reference, &batch).unwrap();
        assert!(out.value >= 0.0);
        // Pointwise: every per-token term e^d - d - 1 >= 0 by convexity.
        for r in &batch {
            for (row, tok) in params.visited_contexts(&r.seq).unwrap() {
                let d = reference.log_softmax_row(row)[tok] - params.log_softmax_row(row)[tok];
                assert!(d.exp() - d - 1.0 >= 0.0);
            }
        }
        // Identical policies: value and gradient exactly zero.
        let same = kl_penalty(&params, &params.snapshot(), &batch).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.gradient.iter().all(|&x| x.abs() <= 1e-8));
    }

    #[test]
    fn k3_gradient_matches_finite_differences() {
        let params = tiny_policy(41);
        let reference = tiny_policy(42);
        let batch = sampled_batch(&params, &[0.3, -0.4, 1.1], 43);
        let out = kl_penalty(&params, &reference, &batch).unwrap();
        let numeric = numeric_gradient(
            &params,
            |p| kl_penalty(p, &reference, &batch).unwrap().value,
            1e-6,
        );
        let rel = relative_frobenius(&out.gradient, &numeric);
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn k3_estimator_is_unbiased_within_monte_carlo_error() {
        // Paired check at a single context: draw tokens from the current
        // policy, average the k3 terms, and compare against the exact
        // KL(pi || ref) at that context. The gap must sit inside 3 standard
        // errors of the sample mean.
        let params = tiny_policy(51);
        let reference = tiny_policy(52);
        let row = 0usize;
        let p = params.softmax_row(row);
        let lp = params.log_softmax_row(row);
        let lp_ref = reference.log_softmax_row(row);
        let exact: f64 = p
            .iter()
            .zip(lp.iter().zip(&lp_ref))
            .map(|(&pj, (&lpj, &lrj))| if pj > 0.0 { pj * (lpj - lrj) } else { 0.0 })
            .sum();
        let n = 50_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut tok = p.len() - 1;
            for (j, &pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    tok = j;
                    break;
                }
            }
            let d = lp_ref[tok] - lp[tok];
            samples.push(d.exp() - d - 1.0);
        }
        let mean: f64 = samples.iter().sum::<f64>() / n as f64;
        let var: f64 = samples
            .iter()
            .map(|&k| (k - mean) * (k - mean))
            .sum::<f64>()
            / n as f64;
        let sigma = (var / n as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * sigma,
            "k3 mean {mean} vs exact {exact} (sigma {sigma})"
        );
        assert!(exact > 0.0, "distinct policies should have positive KL");
    }

    #[test]
    fn entropy_bonus_matches_finite_differences() {
        let params = tiny_policy(61);
        let batch = sampled_batch(&params, &[0.5, -0.5], 62);
        let out = entropy_bonus(&params, &batch).unwrap();
        assert!(out.value > 0.0);
        let numeric = numeric_gradient(&params, |p| entropy_bonus(p, &batch).unwrap().value, 1e-6);
        let rel = relative_frobenius(&out.gradient, &numeric);
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn entropy_schedule_holds_then_decays_geometrically() {
        let s = EntropySchedule::default();
        assert_eq!(s.coef(0), 0.02);
        assert_eq!(s.coef(139), 0.02);
        assert_eq!(s.coef(140), 0.02, "decay exponent is zero at the boundary");
        assert_eq!(s.coef(141), 0.02 * 0.985);
        let c240 = s.coef(240);
        assert_eq!(c240, 0.02 * 0.985f64.powi(100));
        assert!((c240 - 0.004412).abs() < 1e-5);
        // The floor binds once the decay crosses it.
        let floored = EntropySchedule {
            beta_min: 0.005,
            ..s
        };
        assert_eq!(floored.coef(240), 0.005);
        assert_eq!(floored.coef(150), 0.02 * 0.985f64.powi(10));
    }

    #[test]
    fn update_clips_the_gradient_to_the_global_norm_ceiling() {
        let params = tiny_policy(71);
        let mut gradient = Array2::zeros(params.logits.dim());
        gradient[(0, 0)] = 6.0;
        gradient[(1, 1)] = 8.0; // norm = 10
        let (updated, pre_clip) = apply_update(&params, &gradient, 0.5, 1.0).unwrap();
        assert!((pre_clip - 10.0).abs() < 1e-12);
        // Effective step = lr * (max_norm / norm) * g.
        let d00 = params.logits[(0, 0)] - updated.logits[(0, 0)];
        let d11 = params.logits[(1, 1)] - updated.logits[(1, 1)];
        assert!((d00 - 0.5 * 0.6).abs() < 1e-12);
        assert!((d11 - 0.5 * 0.8).abs() < 1e-12);
        // Below the ceiling the gradient passes through unscaled.
        let (updated, pre_clip) = apply_update(&params, &gradient, 0.5, 100.0).unwrap();
        assert!((pre_clip - 10.0).abs() < 1e-12);
        let d00 = params.logits[(0, 0)] - updated.logits[(0, 0)];
        assert!((d00 - 0.5 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn grpo_step_composes_the_loss_and_descends_it() {
        let params = tiny_policy(81);
        let reference = params.snapshot();
        let behavior = params.snapshot();
        let batch = sampled_batch(&behavior, &[1.0, -0.5, 0.7, -1.2], 83);
        let distilled = DistilledBatch {
            selected: batch.clone(),
            selected_indices: vec![0, 1, 2, 3],
            effective_set_size: 4,
            k_prime: 4,
        };
        let cfg = GrpoConfig {
            kl_enabled: true,
            ..GrpoConfig::default()
        };
        let out = grpo_step(&params, Some(&reference), &distilled, &cfg, 0).unwrap();
        let r = out.report;
        assert!((r.total - (r.surrogate + r.kl_coef * r.kl - r.beta * r.entropy)).abs() < 1e-12);
        assert_eq!(r.beta, 0.02);
        assert_eq!(r.kl_coef, 0.002);
        assert_eq!(r.kl, 0.0, "params == reference at the first step");
        assert!(out.params.logits != params.logits, "the update must move");

        // Descending the composed loss: re-evaluating the same batch under
        // the updated params should lower the total (small step, smooth
        // region, ratios near 1).
        let before = r.total;
        let distilled_after = distilled.clone();
        let after = {
            let surrogate = surrogate_loss(
                &out.params,
                &distilled_after.selected,
                0.2,
                RatioLevel::Token,
            )
            .unwrap();
            let kl = kl_penalty(&out.params, &reference, &distilled_after.selected).unwrap();
            let ent = entropy_bonus(&out.params, &distilled_after.selected).unwrap();
            surrogate.loss + 0.002 * kl.value - 0.02 * ent.value
        };
        assert!(after < before, "loss should decrease: {before} -> {after}");
    }

    #[test]
    fn grpo_step_rejects_empty_batches_and_missing_references() {
        let params = tiny_policy(91);
        let empty = DistilledBatch {
            selected: vec![],
            selected_indices: vec![],
            effective_set_size: 0,
            k_prime: 0,
        };
        assert!(matches!(
            grpo_step(&params, None, &empty, &GrpoConfig::default(), 0),
            Err(GrpoError::EmptyBatch)
        ));
        let batch = sampled_batch(&params, &[1.0, -1.0], 92);
        let distilled = DistilledBatch {
            selected: batch,
            selected_indices: vec![0, 1],
            effective_set_size: 2,
            k_prime: 2,
        };
        let cfg = GrpoConfig {
            kl_enabled: true,
            ..GrpoConfig::default()
        };
        assert!(matches!(
            grpo_step(&params, None, &distilled, &cfg, 0),
            Err(GrpoError::MissingReference)
        ));
    }

    #[test]
    fn behavior_length_mismatch_is_rejected() {
        let params = tiny_policy(95);
        let mut batch = sampled_batch(&params, &[1.0], 96);
        batch[0].behavior_logprob_per_token.push(-1.0);
        assert!(matches!(
            surrogate_loss(&params, &batch, 0.2, RatioLevel::Token),
            Err(GrpoError::BehaviorLengthMismatch { .. })
        ));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = GrpoConfig::default();
        assert!(ok.validate().is_ok());
        assert!(GrpoConfig {
            clip_eps: 0.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(GrpoConfig {
            clip_eps: 1.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(GrpoConfig {
            kl_coef: -0.1,
            ..ok
        }
        .validate()
        .is_err());
        assert!(GrpoConfig {
            learning_rate: 0.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(GrpoConfig {
            max_grad_norm: 0.0,
            ..ok
        }
        .validate()
        .is_err());
        let bad_entropy = EntropySchedule {
            decay_lambda: 1.5,
            ..EntropySchedule::default()
        };
        assert!(GrpoConfig {
            entropy: bad_entropy,
            ..ok
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn clip_fraction_is_a_fraction_and_k3_is_nonnegative(
            seed in 0u64..200,
            advantages in proptest::collection::vec(-2.0f64..2.0, 2..6)
        ) {
            let params = tiny_policy(seed);
            let behavior = tiny_policy(seed.wrapping_add(1000));
            let batch = sampled_batch(&behavior, &advantages, seed);
            let out = surrogate_loss(&params, &batch, 0.2, RatioLevel::Token).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.clip_fraction));
            prop_assert!(out.loss.is_finite());
            prop_assert!(out.gradient.iter().all(|x| x.is_finite()));
            let kl = kl_penalty(&params, &behavior, &batch).unwrap();
            prop_assert!(kl.value >= 0.0);
        }
    }
}
