//! Prioritized advantage distillation (PAD) and the baseline selection
//! strategies it is compared against.
//!
//! A rollout batch is distilled in three moves:
//!
//! 1. **Filter.** Keep rollouts whose advantage magnitude lies in the
//!    inclusive band `[t_low, t_high]`. A positive `t_low` drops the
//!    zero-advantage rollouts of uniform-reward groups (which contribute no
//!    gradient, only dilution); `t_high` guards against outliers.
//! 2. **Prioritize.** Give each surviving rollout a softmax weight
//!    `exp(s_i / tau) / Z` over the effective set, where `s_i` is the
//!    advantage magnitude (or, optionally, the signed advantage). If the
//!    normalizer degenerates the weights fall back to uniform. The
//!    temperature follows a linear schedule from `tau_start` to `tau_end`
//!    over a horizon, so late training prioritizes sharply.
//! 3. **Sample.** Draw `k' = min(ceil(rho * N), |E|)` rollouts without
//!    replacement, weighted by those priorities, using the exponential-keys
//!    method: item `i` gets key `Exp(1) / p_i` and the `k'` smallest keys
//!    win. A single draw reproduces the softmax distribution exactly, and
//!    successive draws match sequential renormalized sampling.
//!
//! An empty effective set yields an empty [`DistilledBatch`], which signals
//! the trainer to skip the optimization step entirely rather than feed the
//! optimizer a batch of zeros.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::Rollout;

#[derive(Debug, Error)]
pub enum PadError {
    #[error("thresholds must satisfy 0 < t_low <= t_high, got [{t_low}, {t_high}]")]
    BadThresholds { t_low: f64, t_high: f64 },
    #[error("rho must lie in (0, 1], got {0}")]
    BadRho(f64),
    #[error("tau must be finite and positive, got {0}")]
    BadTau(f64),
    #[error("schedule temperatures must be finite and positive, got start {start}, end {end}")]
    BadScheduleTemps { start: f64, end: f64 },
    #[error("schedule horizon must be at least 1 step")]
    ZeroHorizon,
    #[error("empty effective set")]
    EmptyEffectiveSet,
    #[error(
        "rollout {index} has a non-finite advantage ({value}); run advantage estimation first"
    )]
    NonFiniteAdvantage { index: usize, value: f64 },
    #[error("unknown strategy '{0}'; valid strategies: pad, grpo_baseline, grpo_filter, random_sampling")]
    UnknownStrategy(String),
}

pub type PadResult<T> = Result<T, PadError>;

/// Linear temperature decay for the prioritization softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSchedule {
    /// Temperature at step 0.
    pub tau_start: f64,
    /// Temperature at and after `horizon`.
    pub tau_end: f64,
    /// Steps over which the decay runs. In a config file 0 means "resolve to
    /// the stage step count"; by the time the schedule is used it must be
    /// positive.
    pub horizon: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            tau_start: 1.0,
            tau_end: 0.3,
            horizon: 0,
        }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> PadResult<()> {
        if !self.tau_start.is_finite()
            || !self.tau_end.is_finite()
            || self.tau_start <= 0.0
            || self.tau_end <= 0.0
        {
            return Err(PadError::BadScheduleTemps {
                start: self.tau_start,
                end: self.tau_end,
            });
        }
        if self.horizon == 0 {
            return Err(PadError::ZeroHorizon);
        }
        Ok(())
    }

    /// Temperature at a step: linear from `tau_start` to `tau_end`, clamped
    /// at `tau_end` beyond the horizon. The endpoints are returned exactly.
    pub fn tau_at(&self, step: usize) -> f64 {
        if step == 0 {
            return self.tau_start;
        }
        if step >= self.horizon {
            return self.tau_end;
        }
        let frac = step as f64 / self.horizon as f64;
        self.tau_start + (self.tau_end - self.tau_start) * frac
    }
}

/// Which value feeds the prioritization softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorityMode {
    /// Advantage magnitude `|A|`: surprising rollouts of either sign are
    /// prioritized. The default.
    #[default]
    Magnitude,
    /// Signed advantage `A`: positive-advantage rollouts dominate. Kept
    /// selectable for comparison with the magnitude reading.
    Signed,
}

/// Distillation configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PadConfig {
    /// Lower edge of the advantage-magnitude band (inclusive). Must be
    /// positive so stagnant zero-advantage rollouts are always excluded.
    pub t_low: f64,
    /// Upper edge of the band (inclusive).
    pub t_high: f64,
    /// Distillation ratio: fraction of the batch size that survives.
    pub rho: f64,
    /// Temperature schedule for the prioritization softmax.
    pub tau: TemperatureSchedule,
    /// Softmax input: advantage magnitude (default) or signed advantage.
    pub priority: PriorityMode,
}

impl Default for PadConfig {
    fn default() -> Self {
        Self {
            t_low: 0.05,
            t_high: 10.0,
            rho: 0.5,
            tau: TemperatureSchedule::default(),
            priority: PriorityMode::Magnitude,
        }
    }
}

impl PadConfig {
    pub fn validate(&self) -> PadResult<()> {
        if !self.t_low.is_finite()
            || self.t_low <= 0.0
            || self.t_high.is_nan()
            || self.t_high < self.t_low
        {
            return Err(PadError::BadThresholds {
                t_low: self.t_low,
                t_high: self.t_high,
            });
        }
        if !self.rho.is_finite() || self.rho <= 0.0 || self.rho > 1.0 {
            return Err(PadError::BadRho(self.rho));
        }
        self.tau.validate()
    }
}

/// Batch selection strategies compared in ablations. The names are stable
/// CLI identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Filter, prioritize, sample: the full pipeline.
    Pad,
    /// Identity: the whole batch passes through untouched.
    GrpoBaseline,
    /// Filter only: every effective rollout is kept, no sub-sampling.
    GrpoFilter,
    /// Uniform sample of `k'` rollouts from the whole batch, no filter.
    RandomSampling,
}

impl Strategy {
    /// All strategies, in the canonical comparison order.
    pub const ALL: [Strategy; 4] = [
        Strategy::Pad,
        Strategy::GrpoBaseline,
        Strategy::GrpoFilter,
        Strategy::RandomSampling,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Pad => "pad",
            Strategy::GrpoBaseline => "grpo_baseline",
            Strategy::GrpoFilter => "grpo_filter",
            Strategy::RandomSampling => "random_sampling",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = PadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pad" => Ok(Strategy::Pad),
            "grpo_baseline" => Ok(Strategy::GrpoBaseline),
            "grpo_filter" => Ok(Strategy::GrpoFilter),
            "random_sampling" => Ok(Strategy::RandomSampling),
            other => Err(PadError::UnknownStrategy(other.to_string())),
        }
    }
}

/// One member of the effective set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveItem {
    /// Index into the source batch.
    pub index: usize,
    /// Advantage magnitude `|A|` that qualified it.
    pub magnitude: f64,
}

/// The outcome of batch selection: the rollouts the optimizer will see.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledBatch {
    /// Selected rollouts, in ascending source-index order.
    pub selected: Vec<Rollout>,
    /// Source-batch index of each selected rollout; unique, ascending.
    pub selected_indices: Vec<usize>,
    /// Size of the effective set the selection drew from (the whole batch
    /// for strategies that do not filter).
    pub effective_set_size: usize,
    /// Number of rollouts selected.
    pub k_prime: usize,
}

impl DistilledBatch {
    fn empty() -> Self {
        Self {
            selected: Vec::new(),
            selected_indices: Vec::new(),
            effective_set_size: 0,
            k_prime: 0,
        }
    }

    /// An empty batch signals "skip this optimization step".
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    fn from_indices(batch: &[Rollout], mut indices: Vec<usize>, effective_set_size: usize) -> Self {
        indices.sort_unstable();
        let selected = indices.iter().map(|&i| batch[i].clone()).collect();
        let k_prime = indices.len();
        Self {
            selected,
            selected_indices: indices,
            effective_set_size,
            k_prime,
        }
    }
}

/// Keeps the rollouts whose advantage magnitude lies inside the inclusive
/// band `[t_low, t_high]`.
///
/// # Errors
///
/// Rejects non-finite advantages (estimation must run first) and invalid
/// thresholds.
pub fn filter_effective(
    batch: &[Rollout],
    t_low: f64,
    t_high: f64,
) -> PadResult<Vec<EffectiveItem>> {
    if !t_low.is_finite() || t_low <= 0.0 || t_high.is_nan() || t_high < t_low {
        return Err(PadError::BadThresholds { t_low, t_high });
    }
    let mut effective = Vec::new();
    for (index, rollout) in batch.iter().enumerate() {
        if !rollout.advantage.is_finite() {
            return Err(PadError::NonFiniteAdvantage {
                index,
                value: rollout.advantage,
            });
        }
        let magnitude = rollout.advantage.abs();
        if magnitude >= t_low && magnitude <= t_high {
            effective.push(EffectiveItem { index, magnitude });
        }
    }
    Ok(effective)
}

/// Softmax selection probabilities `exp(s_i / tau) / Z` over priority scores,
/// computed stably (max subtraction); if the normalizer still degenerates the
/// distribution falls back to uniform.
///
/// # Errors
///
/// An empty score set has no distribution; tau must be finite and positive.
pub fn sampling_probabilities(scores: &[f64], tau: f64) -> PadResult<Vec<f64>> {
    if scores.is_empty() {
        return Err(PadError::EmptyEffectiveSet);
    }
    if !tau.is_finite() || tau <= 0.0 {
        return Err(PadError::BadTau(tau));
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| ((s - m) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    if !z.is_finite() || z <= 0.0 {
        let uniform = 1.0 / scores.len() as f64;
        return Ok(vec![uniform; scores.len()]);
    }
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// `k' = min(ceil(rho * n), cap)`: the distilled batch size law.
fn k_prime(rho: f64, n: usize, cap: usize) -> usize {
    ((rho * n as f64).ceil() as usize).min(cap)
}

/// Weighted sampling of `k` items without replacement via exponential keys:
/// item `i` gets key `-ln(U) / p_i` and the `k` smallest keys are taken.
fn weighted_sample_without_replacement<R: Rng>(probs: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            // 1 - U lies in (0, 1], so the key is finite whenever p > 0.
            let u: f64 = 1.0 - rng.random::<f64>();
            (-u.ln() / p, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Full PAD distillation of a batch at a training step.
///
/// An empty effective set yields an empty batch — the "skip this step"
/// signal — rather than an error.
///
/// # Arguments
///
/// * `batch` - rollouts with advantages already estimated.
/// * `cfg` - thresholds, ratio, temperature schedule, priority mode.
/// * `step` - training step, used to evaluate the temperature schedule.
/// * `rng_seed` - seed for the sampling draw; fixed seed, fixed selection.
pub fn distill(
    batch: &[Rollout],
    cfg: &PadConfig,
    step: usize,
    rng_seed: u64,
) -> PadResult<DistilledBatch> {
    cfg.validate()?;
    let effective = filter_effective(batch, cfg.t_low, cfg.t_high)?;
    if effective.is_empty() {
        return Ok(DistilledBatch::empty());
    }
    let scores: Vec<f64> = match cfg.priority {
        PriorityMode::Magnitude => effective.iter().map(|e| e.magnitude).collect(),
        PriorityMode::Signed => effective.iter().map(|e| batch[e.index].advantage).collect(),
    };
    let tau = cfg.tau.tau_at(step);
    let probs = sampling_probabilities(&scores, tau)?;
    let k = k_prime(cfg.rho, batch.len(), effective.len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picks = weighted_sample_without_replacement(&probs, k, &mut rng);
    let indices: Vec<usize> = picks.into_iter().map(|i| effective[i].index).collect();
    Ok(DistilledBatch::from_indices(
        batch,
        indices,
        effective.len(),
    ))
}

/// Dispatches batch selection for a strategy. All four produce a
/// [`DistilledBatch`] with consistent bookkeeping, so the trainer treats them
/// interchangeably.
pub fn select_strategy(
    strategy: Strategy,
    batch: &[Rollout],
    cfg: &PadConfig,
    step: usize,
    rng_seed: u64,
) -> PadResult<DistilledBatch> {
    match strategy {
        Strategy::Pad => distill(batch, cfg, step, rng_seed),
        Strategy::GrpoBaseline => Ok(DistilledBatch::from_indices(
            batch,
            (0..batch.len()).collect(),
            batch.len(),
        )),
        Strategy::GrpoFilter => {
            cfg.validate()?;
            let effective = filter_effective(batch, cfg.t_low, cfg.t_high)?;
            if effective.is_empty() {
                return Ok(DistilledBatch::empty());
            }
            let n = effective.len();
            let indices = effective.into_iter().map(|e| e.index).collect();
            Ok(DistilledBatch::from_indices(batch, indices, n))
        }
        Strategy::RandomSampling => {
            cfg.validate()?;
            if batch.is_empty() {
                return Ok(DistilledBatch::empty());
            }
            let k = k_prime(cfg.rho, batch.len(), batch.len());
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            // Partial Fisher-Yates over the index vector: the first k slots
            // end up a uniform sample without replacement.
            let mut indices: Vec<usize> = (0..batch.len()).collect();
            for i in 0..k {
                let j = rng.random_range(i..indices.len());
                indices.swap(i, j);
            }
            indices.truncate(k);
            Ok(DistilledBatch::from_indices(batch, indices, batch.len()))
        }
    }
}
