//! The staged training loop: rollout → reward → advantage → distill → update,
//! plus curriculum threading, strategy ablations, metrics collection, and
//! checkpointing.
//!
//! Each step works on a batch of `rollout_batch_prompts × group_size`
//! rollouts. The policy is snapshotted, prompts are drawn from the stage
//! dataset, the snapshot generates every group, rewards and group-relative
//! advantages are computed, the configured selection strategy distills the
//! flattened batch, and the optimizer takes `updates_per_batch` gradient
//! steps on the selection (ratios always against the snapshot's stored
//! log-probabilities). An empty distilled batch skips the update but still
//! logs a metrics row flagged `skipped`, so stagnation is visible in the
//! curves rather than hidden.
//!
//! Determinism: every random decision is seeded by
//! [`derive_seed`](crate::seeding::derive_seed) from the stage seed and an
//! index path — `(PROMPTS, step)` for prompt selection,
//! `(ROLLOUT, step, slot, g)` for generation, `(DISTILL, step)` for batch
//! selection. Nothing carries generator state across steps, so a run resumed
//! from a checkpoint at step `t` replays steps `t..T` bit-for-bit.
//!
//! Stages are analogs of the two-phase schedule this simulator models: an
//! `mrl_analog` stage conventionally runs KL-free, and a `trl_analog` stage
//! enables the KL penalty (against the stage-initial policy) and the entropy
//! decay. The mapping is configuration, not code: any ordering and any
//! wiring can be expressed, so stage-ordering ablations are plain config
//! edits.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{batch_advantages, AdvantageError, Group, Rollout, DEFAULT_EPS_STABILITY};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::envs::{self, EnvConfig, EnvError, EOS_TOKEN};
use crate::grpo::{grpo_step, GrpoConfig, GrpoError, LossReport};
use crate::metrics::{write_metrics_csv, MetricsError, TrainMetrics};
use crate::pad::{select_strategy, DistilledBatch, PadConfig, PadError, Strategy};
use crate::policy::{GenParams, PolicyError, PolicyParams, TokenSequence};
use crate::rewards::{LengthRewardConfig, RewardError};
use crate::seeding::{derive_seed, rng_for, stream};
use rand::Rng;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid stage config: {}", violations.join("; "))]
    InvalidStage { violations: Vec<String> },
    #[error("cannot resume at step {start_step} of a {steps}-step stage")]
    InvalidResume { start_step: usize, steps: usize },
    #[error(
        "training diverged at stage '{stage_name}' step {step}{}",
        diagnostic.as_ref().map(|p| format!("; diagnostic checkpoint at {}", p.display())).unwrap_or_default()
    )]
    Diverged {
        stage_name: String,
        step: usize,
        /// Last finite policy, for post-mortem inspection.
        params: Box<PolicyParams>,
        /// Where the diagnostic checkpoint was written, when one was.
        diagnostic: Option<PathBuf>,
    },
    #[error("a curriculum needs at least one stage")]
    NoStages,
    #[error("an ablation needs at least two strategies, got {0}")]
    TooFewStrategies(usize),
    #[error("an ablation needs at least one seed")]
    NoSeeds,
    #[error("strategy '{0}' appears more than once in the ablation")]
    DuplicateStrategy(Strategy),
    #[error("failed to create run directory {path}: {source}")]
    CreateDir {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Pad(#[from] PadError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type TrainerResult<T> = Result<T, TrainerError>;

/// Curriculum stage labels, mirroring the two-phase schedule being modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    /// First-phase analog; conventionally KL-free.
    #[default]
    MrlAnalog,
    /// Second-phase analog; conventionally KL + entropy decay.
    TrlAnalog,
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageName::MrlAnalog => "mrl_analog",
            StageName::TrlAnalog => "trl_analog",
        })
    }
}

/// How initial policies are built for runs that create their own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Autoregressive context order (how many trailing tokens index the
    /// logit table).
    pub context_order: usize,
    /// Standard deviation of the Gaussian logit initialisation.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            context_order: 2,
            init_scale: 0.5,
        }
    }
}

/// Full specification of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub name: StageName,
    pub env: EnvConfig,
    /// Optimization steps in this stage.
    pub steps: usize,
    /// Rollouts per prompt group (G).
    pub group_size: usize,
    /// Prompt groups per step; the flat batch is `prompts * G`.
    pub rollout_batch_prompts: usize,
    /// Gradient steps taken per rollout batch. With 1 (the default) the
    /// policy equals the snapshot at update time, so ratios are 1 and
    /// clipping never binds; higher values re-use the batch off-policy.
    pub updates_per_batch: usize,
    /// Batch selection strategy.
    pub strategy: Strategy,
    /// Rollout generation parameters.
    pub gen: GenParams,
    pub pad: PadConfig,
    pub grpo: GrpoConfig,
    pub rewards: LengthRewardConfig,
    /// Stage seed all random streams derive from. 0 in a config file means
    /// "derive from the run root seed"; it is resolved before training.
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            name: StageName::default(),
            env: EnvConfig::default(),
            steps: 2000,
            group_size: 8,
            rollout_batch_prompts: 8,
            updates_per_batch: 1,
            strategy: Strategy::Pad,
            gen: GenParams::default(),
            pad: PadConfig::default(),
            grpo: GrpoConfig::default(),
            rewards: LengthRewardConfig::default(),
            seed: 0,
        }
    }
}

impl StageConfig {
    /// Collects every violated constraint instead of stopping at the first,
    /// so a config can be fixed in one pass.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut violations = Vec::new();
        if self.steps == 0 {
            violations.push("steps must be at least 1".to_string());
        }
        if self.group_size < 2 {
            violations.push(format!(
                "group_size must be at least 2 for group-relative advantages, got {}",
                self.group_size
            ));
        }
        if self.rollout_batch_prompts == 0 {
            violations.push("rollout_batch_prompts must be at least 1".to_string());
        }
        if self.updates_per_batch == 0 {
            violations.push("updates_per_batch must be at least 1".to_string());
        }
        if let Err(e) = self.env.validate() {
            violations.push(format!("env: {e}"));
        }
        if let Err(e) = self.gen.validate() {
            violations.push(format!("gen: {e}"));
        }
        if let Err(e) = self.pad.validate() {
            violations.push(format!("pad: {e}"));
        }
        if let Err(e) = self.grpo.validate() {
            violations.push(format!("grpo: {e}"));
        }
        if let Err(e) = self.rewards.validate() {
            violations.push(format!("rewards: {e}"));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

/// Observer for metrics rows as they are produced (progress logging,
/// streaming writers). The unit type is the no-op sink.
pub trait MetricsSink {
    fn record(&mut self, row: &TrainMetrics);
}

impl MetricsSink for () {
    fn record(&mut self, _row: &TrainMetrics) {}
}

/// Sink that logs a progress line every `every` steps.
pub struct LogSink {
    pub every: usize,
    pub label: String,
}

impl MetricsSink for LogSink {
    fn record(&mut self, row: &TrainMetrics) {
        if self.every > 0 && row.step.is_multiple_of(self.every) {
            log::info!(
                "{}: step {} accuracy {:.3} len {:.1} |E|/N {:.2}{}",
                self.label,
                row.step,
                row.reward_accuracy,
                row.mean_response_length,
                row.effective_set_fraction,
                if row.skipped { " (skipped)" } else { "" },
            );
        }
    }
}

/// Result of one stage: the trained policy and the per-step metrics.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<TrainMetrics>,
}

/// Assembles the metrics row for a completed or skipped step.
///
/// `report` is `None` exactly when the step was skipped (empty distilled
/// batch): losses and clip fraction are then recorded as zero with the
/// `skipped` flag set. Entropy is evaluated under `policy` (the behavior
/// snapshot) over the step's sampled sequences.
pub fn collect_metrics(
    step: usize,
    batch: &[Rollout],
    selection: &DistilledBatch,
    report: Option<&LossReport>,
    policy: &PolicyParams,
    tau: f64,
    beta: f64,
) -> TrainerResult<TrainMetrics> {
    let n = batch.len().max(1) as f64;
    let correct = batch.iter().filter(|r| r.reward.r_acc == 1.0).count() as f64;
    let mean_len = batch.iter().map(|r| r.seq.len() as f64).sum::<f64>() / n;
    let seqs: Vec<TokenSequence> = batch.iter().map(|r| r.seq.clone()).collect();
    let entropy = policy.policy_entropy(&seqs)?;
    let row = TrainMetrics {
        step,
        skipped: report.is_none(),
        reward_accuracy: correct / n,
        entropy,
        mean_response_length: mean_len,
        clip_fraction: report.map_or(0.0, |r| r.clip_fraction),
        effective_set_fraction: selection.effective_set_size as f64 / n,
        k_prime: selection.k_prime,
        surrogate_loss: report.map_or(0.0, |r| r.surrogate),
        kl_penalty: report.map_or(0.0, |r| r.kl),
        total_loss: report.map_or(0.0, |r| r.total),
        tau,
        beta,
    };
    row.validate()?;
    Ok(row)
}

/// Runs one stage from `start_step` to `cfg.steps`.
///
/// `kl_reference` is the policy the KL penalty anchors to; `None` means
/// "anchor to `initial`", which is correct for a fresh stage. A resumed run
/// must pass the *stage-initial* policy here (from the stage-start
/// checkpoint), not the resumed parameters, or the penalty would drift.
pub fn run_stage(
    initial: &PolicyParams,
    cfg: &StageConfig,
    start_step: usize,
    kl_reference: Option<&PolicyParams>,
    sink: &mut dyn MetricsSink,
) -> TrainerResult<StageOutcome> {
    cfg.validate()
        .map_err(|violations| TrainerError::InvalidStage { violations })?;
    if start_step > cfg.steps {
        return Err(TrainerError::InvalidResume {
            start_step,
            steps: cfg.steps,
        });
    }
    envs::check_policy_convention(&cfg.env, initial)?;
    let dataset = envs::generate_dataset(&cfg.env)?;
    let kl_anchor = kl_reference.unwrap_or(initial).snapshot();
    let mut params = initial.clone();
    let mut metrics = Vec::with_capacity(cfg.steps - start_step);

    for step in start_step..cfg.steps {
        // Behavior policy for the whole step: ratios and rollouts both come
        // from this snapshot, never from mid-step parameters.
        let behavior = params.snapshot();
        let mut prompt_rng = rng_for(cfg.seed, &[stream::PROMPTS, step as u64]);
        let mut groups = Vec::with_capacity(cfg.rollout_batch_prompts);
        for slot in 0..cfg.rollout_batch_prompts {
            let prompt = &dataset[prompt_rng.random_range(0..dataset.len())];
            let prompt_tokens = prompt.encoding();
            let mut rollouts = Vec::with_capacity(cfg.group_size);
            for g in 0..cfg.group_size {
                let mut rng = rng_for(
                    cfg.seed,
                    &[stream::ROLLOUT, step as u64, slot as u64, g as u64],
                );
                let seq = behavior.sample_sequence(
                    &prompt.prompt_id,
                    &prompt_tokens,
                    &cfg.gen,
                    &mut rng,
                )?;
                let lp = behavior.sequence_logprob(&seq)?;
                let reward = crate::rewards::total_reward(prompt, &seq, &cfg.rewards)?;
                rollouts.push(Rollout {
                    seq,
                    behavior_logprob_per_token: lp.per_token,
                    reward,
                    advantage: 0.0,
                });
            }
            groups.push(Group {
                prompt_id: prompt.prompt_id.clone(),
                rollouts,
            });
        }
        batch_advantages(&mut groups, DEFAULT_EPS_STABILITY)?;
        let batch: Vec<Rollout> = groups.into_iter().flat_map(|g| g.rollouts).collect();

        let distill_seed = derive_seed(cfg.seed, &[stream::DISTILL, step as u64]);
        let selection = select_strategy(cfg.strategy, &batch, &cfg.pad, step, distill_seed)?;
        let tau = cfg.pad.tau.tau_at(step);
        let beta = cfg.grpo.entropy.coef(step);

        let report = if selection.is_empty() {
            // Skip: parameters stay bit-identical this step.
            None
        } else {
            let mut last = None;
            for _ in 0..cfg.updates_per_batch {
                let out = grpo_step(&params, Some(&kl_anchor), &selection, &cfg.grpo, step)
                    .map_err(|e| match e {
                        // A non-finite update is divergence, not a usage error.
                        GrpoError::Policy(PolicyError::NonFiniteLogit { .. }) => {
                            TrainerError::Diverged {
                                stage_name: cfg.name.to_string(),
                                step,
                                params: Box::new(params.clone()),
                                diagnostic: None,
                            }
                        }
                        other => TrainerError::Grpo(other),
                    })?;
                if !out.report.total.is_finite() {
                    return Err(TrainerError::Diverged {
                        stage_name: cfg.name.to_string(),
                        step,
                        params: Box::new(params),
                        diagnostic: None,
                    });
                }
                params = out.params;
                last = Some(out.report);
            }
            last
        };

        let row = collect_metrics(
            step,
            &batch,
            &selection,
            report.as_ref(),
            &behavior,
            tau,
            beta,
        )?;
        sink.record(&row);
        metrics.push(row);
    }

    Ok(StageOutcome { params, metrics })
}

/// Artifacts persisted for one stage of a curriculum run.
#[derive(Debug, Clone)]
pub struct StageArtifacts {
    pub stage_index: usize,
    pub stage_name: String,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub metrics: Vec<TrainMetrics>,
}

/// Result of a full curriculum run.
#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    pub final_params: PolicyParams,
    pub stages: Vec<StageArtifacts>,
}

/// Runs the stages in order, threading each stage's final policy into the
/// next, and persists per-stage metrics CSVs and checkpoints under
/// `out_dir/stage_NN_<name>/`. On divergence a diagnostic checkpoint is
/// written before the error is returned.
pub fn run_curriculum(
    initial: &PolicyParams,
    stages: &[StageConfig],
    config_hash: u64,
    root_seed: u64,
    out_dir: &Path,
    sink: &mut dyn MetricsSink,
) -> TrainerResult<CurriculumOutcome> {
    if stages.is_empty() {
        return Err(TrainerError::NoStages);
    }
    let create = |path: &Path| {
        fs::create_dir_all(path).map_err(|source| TrainerError::CreateDir {
            path: path.display().to_string(),
            source,
        })
    };
    create(out_dir)?;
    let mut params = initial.clone();
    let mut artifacts = Vec::with_capacity(stages.len());
    for (stage_index, cfg) in stages.iter().enumerate() {
        let dir = out_dir.join(format!("stage_{stage_index:02}_{}", cfg.name));
        create(&dir)?;
        let make_checkpoint = |step: usize, params: PolicyParams| Checkpoint {
            config_hash,
            root_seed,
            stage_seed: cfg.seed,
            stage_index,
            stage_name: cfg.name.to_string(),
            step,
            params,
        };
        let outcome = match run_stage(&params, cfg, 0, None, sink) {
            Ok(outcome) => outcome,
            Err(TrainerError::Diverged {
                stage_name,
                step,
                params: last,
                ..
            }) => {
                let diag_path = dir.join(format!("diverged_step_{step:05}.ckpt"));
                make_checkpoint(step, (*last).clone()).save(&diag_path)?;
                return Err(TrainerError::Diverged {
                    stage_name,
                    step,
                    params: last,
                    diagnostic: Some(diag_path),
                });
            }
            Err(other) => return Err(other),
        };
        let metrics_path = dir.join("metrics.csv");
        write_metrics_csv(&metrics_path, &outcome.metrics)?;
        let checkpoint_path = dir.join("checkpoint.ckpt");
        make_checkpoint(cfg.steps, outcome.params.clone()).save(&checkpoint_path)?;
        artifacts.push(StageArtifacts {
            stage_index,
            stage_name: cfg.name.to_string(),
            metrics_path,
            checkpoint_path,
            metrics: outcome.metrics,
        });
        params = outcome.params;
    }
    Ok(CurriculumOutcome {
        final_params: params,
        stages: artifacts,
    })
}

/// One (strategy, seed) training run within an ablation.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub metrics: Vec<TrainMetrics>,
    /// Mean reward accuracy over the final 10% of steps (at least one).
    pub terminal_accuracy: f64,
    /// Mean reward accuracy over all steps: area under the accuracy curve,
    /// normalized — the convergence-speed proxy.
    pub auc: f64,
}

/// Aggregates over seeds for one strategy.
#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub terminal_accuracy_mean: f64,
    pub terminal_accuracy_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

/// Result of a strategy ablation.
#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// Seed-major: all strategies for seed 0, then seed 1, ...
    pub runs: Vec<AblationRun>,
    /// One row per strategy, in the requested order.
    pub summary: Vec<StrategySummary>,
}

/// Mean accuracy over the last `max(1, n/10)` rows.
fn terminal_accuracy(metrics: &[TrainMetrics]) -> f64 {
    let window = (metrics.len() / 10).max(1);
    let tail = &metrics[metrics.len() - window..];
    tail.iter().map(|m| m.reward_accuracy).sum::<f64>() / window as f64
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every (strategy, seed) pair of an ablation from a shared per-seed
/// initial policy, so strategy comparisons are paired: at a given seed, all
/// strategies see the same initialisation, the same dataset, and the same
/// rollout randomness.
pub fn run_ablation(
    base: &StageConfig,
    policy: &PolicyConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    sink: &mut dyn MetricsSink,
) -> TrainerResult<AblationOutcome> {
    if strategies.len() < 2 {
        return Err(TrainerError::TooFewStrategies(strategies.len()));
    }
    for (i, s) in strategies.iter().enumerate() {
        if strategies[..i].contains(s) {
            return Err(TrainerError::DuplicateStrategy(*s));
        }
    }
    if seeds.is_empty() {
        return Err(TrainerError::NoSeeds);
    }
    base.validate()
        .map_err(|violations| TrainerError::InvalidStage { violations })?;

    let mut runs = Vec::with_capacity(strategies.len() * seeds.len());
    for &seed in seeds {
        let mut stage = base.clone();
        stage.seed = seed;
        stage.env.rng_seed = derive_seed(seed, &[stream::STAGE]);
        let initial = PolicyParams::random_init(
            stage.env.vocab_size,
            policy.context_order,
            stage.env.max_len,
            EOS_TOKEN,
            policy.init_scale,
            derive_seed(seed, &[stream::INIT]),
        )?;
        for &strategy in strategies {
            let mut run_cfg = stage.clone();
            run_cfg.strategy = strategy;
            let outcome = run_stage(&initial, &run_cfg, 0, None, sink)?;
            runs.push(AblationRun {
                strategy,
                seed,
                terminal_accuracy: terminal_accuracy(&outcome.metrics),
                auc: outcome
                    .metrics
                    .iter()
                    .map(|m| m.reward_accuracy)
                    .sum::<f64>()
                    / outcome.metrics.len() as f64,
                metrics: outcome.metrics,
            });
        }
    }

    let summary = strategies
        .iter()
        .map(|&strategy| {
            let terminal: Vec<f64> = runs
                .iter()
                .filter(|r| r.strategy == strategy)
                .map(|r| r.terminal_accuracy)
                .collect();
            let auc: Vec<f64> = runs
                .iter()
                .filter(|r| r.strategy == strategy)
                .map(|r| r.auc)
                .collect();
            let (terminal_accuracy_mean, terminal_accuracy_std) = mean_and_std(&terminal);
            let (auc_mean, auc_std) = mean_and_std(&auc);
            StrategySummary {
                strategy,
                terminal_accuracy_mean,
                terminal_accuracy_std,
                auc_mean,
                auc_std,
            }
        })
        .collect();

    Ok(AblationOutcome { runs, summary })
}
