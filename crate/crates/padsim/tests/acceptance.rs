//! Acceptance gate: one integration test per verified property of the
//! toolkit. Each test prints a single `ACCEPTANCE n (name): PASS/FAIL` line
//! (visible under `cargo test --test acceptance -- --nocapture`) and fails
//! the suite if the property — or its runtime budget — is violated.
//!
//! The quantitative checks (1–6, 9) pin estimator formulas, schedule
//! arithmetic, gradients, and determinism against independently computed
//! oracles. The qualitative checks (7, 8) reproduce the two headline
//! training behaviours on tuned desk-scale configs: prioritized distillation
//! beating its ablations under gradient stagnation, and the length reward
//! suppressing response-length drift on a padding-exploitable task.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::Array2;
use padsim::advantage::{estimate_advantages, Group, Rollout, DEFAULT_EPS_STABILITY};
use padsim::checkpoint::Checkpoint;
use padsim::config::RunConfig;
use padsim::envs::{stagnation_probe, EnvConfig, TaskKind, EOS_TOKEN};
use padsim::grpo::{kl_penalty, surrogate_loss, EntropySchedule, GrpoConfig, RatioLevel};
use padsim::metrics::TrainMetrics;
use padsim::pad::{
    distill, sampling_probabilities, PadConfig, PriorityMode, Strategy, TemperatureSchedule,
};
use padsim::policy::{GenParams, PolicyParams, TokenSequence};
use padsim::rewards::{length_reward, LengthRewardConfig, RewardBreakdown};
use padsim::seeding::{derive_seed, stream};
use padsim::trainer::{run_ablation, run_curriculum, run_stage, PolicyConfig, StageConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runs one criterion body, prints its verdict line, and enforces the
/// runtime budget.
fn criterion<F: FnOnce()>(number: usize, name: &str, budget: Duration, body: F) {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let verdict = if outcome.is_ok() && elapsed <= budget {
        "PASS"
    } else {
        "FAIL"
    };
    println!("ACCEPTANCE {number} ({name}): {verdict} [{elapsed:.2?}, budget {budget:?}]");
    if let Err(cause) = outcome {
        panic::resume_unwind(cause);
    }
    assert!(
        elapsed <= budget,
        "criterion {number} exceeded its {budget:?} runtime budget: {elapsed:?}"
    );
}

/// Minimal rollout carrying only what the advantage and selection code read.
fn stub_rollout(prompt_id: &str, r_total: f64, advantage: f64) -> Rollout {
    Rollout {
        seq: TokenSequence {
            prompt_id: prompt_id.to_string(),
            prompt_tokens: Vec::new(),
            tokens: Vec::new(),
        },
        behavior_logprob_per_token: Vec::new(),
        reward: RewardBreakdown {
            r_acc: 0.0,
            r_len: 0.0,
            r_total,
        },
        advantage,
    }
}

#[test]
fn acceptance_1_advantage_oracle_equivalence() {
    criterion(
        1,
        "advantage oracle equivalence",
        Duration::from_secs(1),
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAD01);
            for case in 0..1000 {
                let g = rng.random_range(2..=16usize);
                let binary = case % 2 == 0;
                let force_uniform = case % 5 == 0;
                let uniform_value = if binary {
                    f64::from(rng.random_range(0..=1u32))
                } else {
                    rng.random::<f64>() * 4.0 - 2.0
                };
                let rewards: Vec<f64> = (0..g)
                    .map(|_| {
                        if force_uniform {
                            uniform_value
                        } else if binary {
                            f64::from(rng.random_range(0..=1u32))
                        } else {
                            rng.random::<f64>() * 4.0 - 2.0
                        }
                    })
                    .collect();
                let prompt_id = format!("case-{case}");
                let mut group = Group {
                    prompt_id: prompt_id.clone(),
                    rollouts: rewards
                        .iter()
                        .map(|&r| stub_rollout(&prompt_id, r, 0.0))
                        .collect(),
                };
                estimate_advantages(&mut group, DEFAULT_EPS_STABILITY).unwrap();

                // Independent two-pass mean / population-std oracle.
                let n = g as f64;
                let mean = rewards.iter().sum::<f64>() / n;
                let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
                let denom = var.sqrt() + DEFAULT_EPS_STABILITY;
                for (r, rollout) in rewards.iter().zip(&group.rollouts) {
                    let expected = (r - mean) / denom;
                    assert!(
                        (rollout.advantage - expected).abs() <= 1e-9,
                        "case {case}: advantage {} vs oracle {expected}",
                        rollout.advantage
                    );
                }
                if rewards.iter().all(|&r| r == rewards[0]) {
                    for rollout in &group.rollouts {
                        assert_eq!(rollout.advantage, 0.0, "uniform group must be exactly zero");
                    }
                }
            }
        },
    );
}

#[test]
fn acceptance_2_distillation_law_suite() {
    criterion(2, "distillation law suite", Duration::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xAD02);
        for case in 0..1000usize {
            let n = rng.random_range(4..=24usize);
            let advantages: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < 0.25 {
                        0.0
                    } else {
                        let u = rng.random::<f64>() * 2.0 - 1.0;
                        u * u * u * 5.0
                    }
                })
                .collect();
            let batch: Vec<Rollout> = advantages
                .iter()
                .map(|&a| stub_rollout("law", 0.0, a))
                .collect();
            let t_low = 0.01 + rng.random::<f64>() * 0.39;
            let t_high = if case % 13 == 0 {
                f64::INFINITY
            } else {
                t_low + 0.3 + rng.random::<f64>() * 14.7
            };
            let rho = 0.01 + rng.random::<f64>() * 0.99;
            let cfg = PadConfig {
                t_low,
                t_high,
                rho,
                tau: TemperatureSchedule {
                    tau_start: 0.3 + rng.random::<f64>() * 1.7,
                    tau_end: 0.1 + rng.random::<f64>() * 0.2,
                    horizon: 1 + case % 7,
                },
                priority: PriorityMode::Magnitude,
            };
            let step = rng.random_range(0..10usize);
            let out = distill(&batch, &cfg, step, 0xD15 + case as u64).unwrap();

            // Test-side effective set and selection size law.
            let effective: Vec<usize> = (0..n)
                .filter(|&i| {
                    let m = advantages[i].abs();
                    m >= t_low && m <= t_high
                })
                .collect();
            let expected_k = if effective.is_empty() {
                0
            } else {
                ((rho * n as f64).ceil() as usize).min(effective.len())
            };
            assert_eq!(out.effective_set_size, effective.len(), "case {case}");
            assert_eq!(out.k_prime, expected_k, "case {case}");
            assert_eq!(out.selected_indices.len(), expected_k, "case {case}");
            assert_eq!(out.is_empty(), expected_k == 0, "case {case}");

            // Band membership plus unique ascending indices.
            for window in out.selected_indices.windows(2) {
                assert!(window[0] < window[1], "case {case}: indices not ascending");
            }
            for (&i, selected) in out.selected_indices.iter().zip(&out.selected) {
                let m = advantages[i].abs();
                assert!(
                    m >= t_low && m <= t_high,
                    "case {case}: selected |A|={m} outside [{t_low}, {t_high}]"
                );
                assert_eq!(selected.advantage, advantages[i], "case {case}");
            }

            // Probability normalization and monotonicity in |A|.
            if !effective.is_empty() {
                let scores: Vec<f64> = effective.iter().map(|&i| advantages[i].abs()).collect();
                let probs = sampling_probabilities(&scores, cfg.tau.tau_at(step)).unwrap();
                let total: f64 = probs.iter().sum();
                assert!(
                    (total - 1.0).abs() <= 1e-12,
                    "case {case}: probabilities sum to {total}"
                );
                for i in 0..scores.len() {
                    for j in 0..scores.len() {
                        if scores[i] > scores[j] + 1e-12 {
                            assert!(
                                probs[i] > probs[j],
                                "case {case}: p({}) !> p({}) for |A| {} > {}",
                                i,
                                j,
                                scores[i],
                                scores[j]
                            );
                        } else if (scores[i] - scores[j]).abs() <= 1e-12 {
                            assert!((probs[i] - probs[j]).abs() <= 1e-9, "case {case}");
                        }
                    }
                }
            }
        }

        // Single-draw empirical frequencies against the softmax distribution.
        let magnitudes = [0.2, 0.45, 0.8, 1.3, 2.1, 3.4];
        let batch: Vec<Rollout> = magnitudes
            .iter()
            .enumerate()
            .map(|(i, &m)| stub_rollout("freq", 0.0, if i % 2 == 0 { m } else { -m }))
            .collect();
        let cfg = PadConfig {
            t_low: 0.05,
            t_high: 10.0,
            rho: 0.15, // ceil(0.15 * 6) = 1: single-draw selection
            tau: TemperatureSchedule {
                tau_start: 0.7,
                tau_end: 0.7,
                horizon: 1,
            },
            priority: PriorityMode::Magnitude,
        };
        let probs = sampling_probabilities(&magnitudes, 0.7).unwrap();
        let trials = 100_000usize;
        let mut counts = [0usize; 6];
        for trial in 0..trials {
            let out = distill(&batch, &cfg, 0, 0xF0E0 + trial as u64).unwrap();
            assert_eq!(out.k_prime, 1);
            counts[out.selected_indices[0]] += 1;
        }
        for (i, (&count, &p)) in counts.iter().zip(&probs).enumerate() {
            let freq = count as f64 / trials as f64;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "index {i}: frequency {freq} vs probability {p} (3 sigma = {})",
                3.0 * sigma
            );
        }
    });
}

/// Central finite differences of `f` over every logit coordinate.
fn finite_difference_gradient<F: Fn(&PolicyParams) -> f64>(
    params: &PolicyParams,
    context_order: usize,
    max_len: usize,
    eos: usize,
    h: f64,
    f: F,
) -> Array2<f64> {
    let (rows, cols) = params.logits.dim();
    let mut grad = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut up = params.logits.clone();
            up[(r, c)] += h;
            let plus = PolicyParams::from_logits(up, context_order, max_len, eos).unwrap();
            let mut down = params.logits.clone();
            down[(r, c)] -= h;
            let minus = PolicyParams::from_logits(down, context_order, max_len, eos).unwrap();
            grad[(r, c)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    grad
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_error(got: &Array2<f64>, expected: &Array2<f64>) -> f64 {
    let diff = got - expected;
    frobenius(&diff) / frobenius(expected).max(frobenius(got)).max(1e-12)
}

#[test]
fn acceptance_3_gradient_correctness() {
    criterion(3, "gradient correctness", Duration::from_secs(30), || {
        const VOCAB: usize = 4;
        const ORDER: usize = 1;
        const MAX_LEN: usize = 5;
        const EOS: usize = 3;
        const H: f64 = 1e-5;
        const CLIP: f64 = 0.2;
        let gen = GenParams {
            temperature: 1.0,
            top_p: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0xAD03);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        while accepted < 100 {
            attempts += 1;
            assert!(attempts < 10_000, "could not assemble 100 smooth instances");
            let level = if accepted.is_multiple_of(2) {
                RatioLevel::Token
            } else {
                RatioLevel::Sequence
            };
            let behavior =
                PolicyParams::random_init(VOCAB, ORDER, MAX_LEN, EOS, 0.6, rng.random()).unwrap();
            let delta = Array2::from_shape_fn(behavior.logits.dim(), |_| {
                (rng.random::<f64>() * 2.0 - 1.0) * 0.15
            });
            let current =
                PolicyParams::from_logits(&behavior.logits + &delta, ORDER, MAX_LEN, EOS).unwrap();

            let mut batch = Vec::new();
            for _ in 0..3 {
                let seq = behavior.sample_sequence("fd", &[], &gen, &mut rng).unwrap();
                let behavior_lp = behavior.sequence_logprob(&seq).unwrap().per_token;
                let mut advantage = (rng.random::<f64>() * 2.0 - 1.0) * 1.5;
                if advantage.abs() < 0.05 {
                    advantage = 0.3;
                }
                batch.push(Rollout {
                    seq,
                    behavior_logprob_per_token: behavior_lp,
                    reward: RewardBreakdown {
                        r_acc: 0.0,
                        r_len: 0.0,
                        r_total: 0.0,
                    },
                    advantage,
                });
            }

            // Reject instances with a ratio term near a clip kink, where
            // central differences straddle the non-differentiable point.
            let near_kink = batch.iter().any(|r| {
                let current_lp = current.sequence_logprob(&r.seq).unwrap();
                let ratios: Vec<f64> = match level {
                    RatioLevel::Token => current_lp
                        .per_token
                        .iter()
                        .zip(&r.behavior_logprob_per_token)
                        .map(|(c, b)| (c - b).exp())
                        .collect(),
                    RatioLevel::Sequence => {
                        let b_total: f64 = r.behavior_logprob_per_token.iter().sum();
                        vec![(current_lp.total - b_total).exp()]
                    }
                };
                ratios.iter().any(|rho| {
                    (rho - (1.0 - CLIP)).abs() < 2e-3 || (rho - (1.0 + CLIP)).abs() < 2e-3
                })
            });
            if near_kink {
                continue;
            }

            let analytic = surrogate_loss(&current, &batch, CLIP, level).unwrap();
            let fd = finite_difference_gradient(&current, ORDER, MAX_LEN, EOS, H, |p| {
                surrogate_loss(p, &batch, CLIP, level).unwrap().loss
            });
            let err = relative_error(&analytic.gradient, &fd);
            assert!(
                err <= 1e-4,
                "instance {accepted} ({level:?}): surrogate gradient relative error {err}"
            );

            let seq = batch[0].seq.clone();
            let analytic_lp = current.logprob_gradient(&seq).unwrap();
            let fd_lp = finite_difference_gradient(&current, ORDER, MAX_LEN, EOS, H, |p| {
                p.sequence_logprob(&seq).unwrap().total
            });
            let err_lp = relative_error(&analytic_lp, &fd_lp);
            assert!(
                err_lp <= 1e-4,
                "instance {accepted}: log-prob gradient relative error {err_lp}"
            );
            accepted += 1;
        }

        // Zero-advantage batches must yield bitwise-zero gradients.
        for case in 0..10 {
            let params =
                PolicyParams::random_init(VOCAB, ORDER, MAX_LEN, EOS, 0.6, 900 + case).unwrap();
            let batch: Vec<Rollout> = (0..4)
                .map(|_| {
                    let seq = params.sample_sequence("zero", &[], &gen, &mut rng).unwrap();
                    let behavior_lp = params.sequence_logprob(&seq).unwrap().per_token;
                    Rollout {
                        seq,
                        behavior_logprob_per_token: behavior_lp,
                        reward: RewardBreakdown {
                            r_acc: 0.0,
                            r_len: 0.0,
                            r_total: 0.0,
                        },
                        advantage: 0.0,
                    }
                })
                .collect();
            for level in [RatioLevel::Token, RatioLevel::Sequence] {
                let out = surrogate_loss(&params, &batch, CLIP, level).unwrap();
                assert_eq!(out.loss, 0.0, "zero-advantage loss must be exactly zero");
                assert!(
                    out.gradient.iter().all(|&g| g == 0.0),
                    "zero-advantage gradient must be exactly zero"
                );
            }
        }
    });
}

#[test]
fn acceptance_4_length_reward_fixed_points() {
    criterion(
        4,
        "length-reward fixed points",
        Duration::from_secs(1),
        || {
            let cfg = LengthRewardConfig {
                enabled: true,
                alpha: 0.005,
                delta: 0.5,
                l_budget: 400,
                weight: 1.0,
            };
            // At the budget the reward equals delta exactly.
            assert_eq!(length_reward(&cfg, 400), 0.5);
            // Saturation boundaries: budget - (1-delta)/alpha and budget + delta/alpha.
            assert_eq!(length_reward(&cfg, 300), 1.0);
            assert_eq!(length_reward(&cfg, 299), 1.0);
            assert_eq!(length_reward(&cfg, 500), 0.0);
            assert_eq!(length_reward(&cfg, 501), 0.0);
            // Strictly inside the ramp the reward leaves both plateaus.
            assert!(length_reward(&cfg, 301) < 1.0);
            assert!(length_reward(&cfg, 499) > 0.0);
            // Monotone non-increasing over a full sweep, always within [0, 1].
            let mut previous = f64::INFINITY;
            for len in 0..=2000usize {
                let r = length_reward(&cfg, len);
                assert!((0.0..=1.0).contains(&r), "R({len}) = {r} out of range");
                assert!(
                    r <= previous,
                    "R({len}) = {r} > R({}) = {previous}",
                    len - 1
                );
                previous = r;
            }
        },
    );
}

#[test]
fn acceptance_5_schedule_checks() {
    criterion(5, "schedule checks", Duration::from_secs(1), || {
        let entropy = EntropySchedule::default();
        assert_eq!(entropy.coef(0), 0.02);
        for step in 0..140 {
            assert_eq!(entropy.coef(step), 0.02, "warmup must be constant");
        }
        for step in [140usize, 141, 150, 160, 180, 200, 300, 400, 700, 1000] {
            let expected = 0.02 * 0.985f64.powi((step - 140) as i32);
            let got = entropy.coef(step);
            assert!(
                ((got - expected) / expected).abs() <= 1e-12,
                "decay mismatch at {step}: {got} vs {expected}"
            );
        }
        assert!(entropy.coef(141) < entropy.coef(140));

        let tau = TemperatureSchedule {
            tau_start: 1.0,
            tau_end: 0.3,
            horizon: 100,
        };
        assert_eq!(tau.tau_at(0), 1.0);
        assert_eq!(tau.tau_at(100), 0.3);
        assert_eq!(tau.tau_at(5000), 0.3);
        for step in [10usize, 25, 50, 75, 90] {
            let expected = 1.0 + (0.3 - 1.0) * (step as f64 / 100.0);
            assert!(
                (tau.tau_at(step) - expected).abs() <= 1e-12,
                "tau({step}) = {} departs from the line through the endpoints",
                tau.tau_at(step)
            );
        }
    });
}

#[test]
fn acceptance_6_kl_estimator() {
    criterion(6, "kl estimator", Duration::from_secs(10), || {
        const VOCAB: usize = 5;
        const EOS: usize = 4;
        let gen = GenParams {
            temperature: 1.0,
            top_p: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0xAD06);
        let draws = 2000usize;
        for pair in 0..50 {
            let params = PolicyParams::random_init(VOCAB, 1, 1, EOS, 0.8, rng.random()).unwrap();
            let reference = PolicyParams::random_init(VOCAB, 1, 1, EOS, 0.8, rng.random()).unwrap();

            // Exact KL at the single visited context row, by enumeration.
            let row = params.context_row(&[], &[]);
            let p = params.softmax_row(row);
            let log_p = params.log_softmax_row(row);
            let log_q = reference.log_softmax_row(row);
            let exact: f64 = (0..VOCAB).map(|j| p[j] * (log_p[j] - log_q[j])).sum();

            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..draws {
                let seq = params.sample_sequence("kl", &[], &gen, &mut rng).unwrap();
                let behavior_lp = params.sequence_logprob(&seq).unwrap().per_token;
                let rollout = Rollout {
                    seq,
                    behavior_logprob_per_token: behavior_lp,
                    reward: RewardBreakdown {
                        r_acc: 0.0,
                        r_len: 0.0,
                        r_total: 0.0,
                    },
                    advantage: 0.0,
                };
                let out = kl_penalty(&params, &reference, std::slice::from_ref(&rollout)).unwrap();
                assert!(out.value >= 0.0, "pair {pair}: k3 estimate went negative");
                sum += out.value;
                sum_sq += out.value * out.value;
            }
            let n = draws as f64;
            let mean = sum / n;
            let variance = ((sum_sq / n) - mean * mean).max(0.0) * n / (n - 1.0);
            let sigma = (variance / n).sqrt();
            assert!(
                (mean - exact).abs() <= 3.0 * sigma + 1e-9,
                "pair {pair}: Monte-Carlo mean {mean} vs exact {exact} (3 sigma = {})",
                3.0 * sigma
            );
        }

        // Identical policies: exactly zero value and gradient.
        let params = PolicyParams::random_init(VOCAB, 1, 3, EOS, 0.8, 77).unwrap();
        let batch: Vec<Rollout> = (0..3)
            .map(|_| {
                let seq = params.sample_sequence("same", &[], &gen, &mut rng).unwrap();
                let behavior_lp = params.sequence_logprob(&seq).unwrap().per_token;
                Rollout {
                    seq,
                    behavior_logprob_per_token: behavior_lp,
                    reward: RewardBreakdown {
                        r_acc: 0.0,
                        r_len: 0.0,
                        r_total: 0.0,
                    },
                    advantage: 0.0,
                }
            })
            .collect();
        let out = kl_penalty(&params, &params, &batch).unwrap();
        assert_eq!(out.value, 0.0, "k3 at params == ref must be exactly zero");
        assert!(out.gradient.iter().all(|&g| g == 0.0));
    });
}

/// The tuned high-stagnation digit-sum ablation configuration.
fn stagnation_stage() -> StageConfig {
    StageConfig {
        env: EnvConfig {
            task_kind: TaskKind::DigitSum,
            vocab_size: 12,
            max_len: 8,
            difficulty_range: [0.55, 0.75],
            dataset_size: 32,
            rng_seed: 0,
        },
        steps: 600,
        group_size: 8,
        rollout_batch_prompts: 4,
        pad: PadConfig {
            rho: 0.25,
            tau: TemperatureSchedule {
                tau_start: 1.0,
                tau_end: 0.3,
                horizon: 600,
            },
            ..PadConfig::default()
        },
        grpo: GrpoConfig {
            learning_rate: 0.3,
            ..GrpoConfig::default()
        },
        ..StageConfig::default()
    }
}

#[test]
fn acceptance_7_stagnation_ablation_ordering() {
    criterion(
        7,
        "stagnation ablation ordering",
        Duration::from_secs(600),
        || {
            let base = stagnation_stage();
            let policy = PolicyConfig {
                context_order: 1,
                init_scale: 0.3,
            };
            let seeds = [1u64, 2, 3, 4, 5];

            // The config must actually sit in the high-stagnation regime at
            // initialisation for every seed.
            for &seed in &seeds {
                let mut env = base.env.clone();
                env.rng_seed = derive_seed(seed, &[stream::STAGE]);
                let init = PolicyParams::random_init(
                    env.vocab_size,
                    policy.context_order,
                    env.max_len,
                    EOS_TOKEN,
                    policy.init_scale,
                    derive_seed(seed, &[stream::INIT]),
                )
                .unwrap();
                let stagnant = stagnation_probe(&env, &init, base.group_size, 200, 1234).unwrap();
                assert!(
                    stagnant >= 0.6,
                    "seed {seed}: stagnation probe {stagnant} below the 0.6 floor"
                );
            }

            let out = run_ablation(&base, &policy, &Strategy::ALL, &seeds, &mut ()).unwrap();
            let terminal = |seed: u64, strategy: Strategy| {
                out.runs
                    .iter()
                    .find(|r| r.seed == seed && r.strategy == strategy)
                    .unwrap()
                    .terminal_accuracy
            };
            let wins = seeds
                .iter()
                .filter(|&&s| terminal(s, Strategy::Pad) >= terminal(s, Strategy::GrpoBaseline))
                .count();
            assert!(
                wins >= 4,
                "distillation beat the unfiltered baseline in only {wins}/5 seeds"
            );

            let auc_of = |strategy: Strategy| {
                out.summary
                    .iter()
                    .find(|s| s.strategy == strategy)
                    .unwrap()
                    .auc_mean
            };
            let pad_auc = auc_of(Strategy::Pad);
            for strategy in [
                Strategy::GrpoBaseline,
                Strategy::GrpoFilter,
                Strategy::RandomSampling,
            ] {
                assert!(
                    pad_auc > auc_of(strategy),
                    "mean AUC {pad_auc} not strictly greatest: {strategy} reached {}",
                    auc_of(strategy)
                );
            }
        },
    );
}

/// The tuned padding-exploit configuration; `enabled` toggles the length
/// reward, everything else is shared between the two arms.
fn padding_stage(enabled: bool, seed: u64) -> StageConfig {
    let mut cfg = StageConfig {
        env: EnvConfig {
            task_kind: TaskKind::PaddingExploit,
            vocab_size: 12,
            max_len: 32,
            difficulty_range: [0.3, 0.7],
            dataset_size: 32,
            rng_seed: derive_seed(seed, &[stream::STAGE]),
        },
        steps: 500,
        group_size: 8,
        rollout_batch_prompts: 4,
        pad: PadConfig {
            tau: TemperatureSchedule {
                tau_start: 1.0,
                tau_end: 0.3,
                horizon: 500,
            },
            ..PadConfig::default()
        },
        grpo: GrpoConfig {
            learning_rate: 0.3,
            ..GrpoConfig::default()
        },
        seed,
        ..StageConfig::default()
    };
    cfg.rewards = LengthRewardConfig {
        enabled,
        alpha: 0.2,
        delta: 0.9,
        l_budget: 11,
        weight: 0.72,
    };
    cfg
}

#[test]
fn acceptance_8_length_drift_control() {
    criterion(8, "length drift control", Duration::from_secs(300), || {
        let seeds = [1u64, 2, 3];
        let window_mean = |metrics: &[TrainMetrics], range: std::ops::Range<usize>| {
            let slice = &metrics[range];
            slice.iter().map(|m| m.mean_response_length).sum::<f64>() / slice.len() as f64
        };
        let mut exploit_holds = 0usize;
        let mut control_holds = 0usize;
        for &seed in &seeds {
            let init = PolicyParams::random_init(
                12,
                1,
                32,
                EOS_TOKEN,
                0.3,
                derive_seed(seed, &[stream::INIT]),
            )
            .unwrap();
            let mut drift = [0.0f64; 2];
            for (slot, enabled) in [false, true].into_iter().enumerate() {
                let cfg = padding_stage(enabled, seed);
                let out = run_stage(&init, &cfg, 0, None, &mut ()).unwrap();
                let window = cfg.steps / 10;
                let first = window_mean(&out.metrics, 0..window);
                let last = window_mean(&out.metrics, cfg.steps - window..cfg.steps);
                drift[slot] = last / first;
            }
            // Budget 11 sits at the initial mean response length (~10-11
            // tokens under the order-1 initialisation).
            if drift[0] >= 1.25 {
                exploit_holds += 1;
            }
            if (0.9..=1.1).contains(&drift[1]) {
                control_holds += 1;
            }
        }
        assert!(
            exploit_holds >= 2,
            "length drift >= +25% without the length reward in only {exploit_holds}/3 seeds"
        );
        assert!(
            control_holds >= 2,
            "drift within +/-10% with the length reward in only {control_holds}/3 seeds"
        );
    });
}

/// A small, fully resolved one-stage run for the determinism checks.
fn determinism_config() -> RunConfig {
    let mut cfg = RunConfig {
        root_seed: 7,
        policy: PolicyConfig {
            context_order: 1,
            init_scale: 0.3,
        },
        stages: vec![StageConfig {
            env: EnvConfig {
                task_kind: TaskKind::DigitSum,
                vocab_size: 12,
                max_len: 8,
                difficulty_range: [0.05, 0.1],
                dataset_size: 8,
                rng_seed: 0,
            },
            steps: 30,
            group_size: 4,
            rollout_batch_prompts: 2,
            grpo: GrpoConfig {
                learning_rate: 0.05,
                kl_enabled: true,
                kl_coef: 0.01,
                ..GrpoConfig::default()
            },
            ..StageConfig::default()
        }],
    };
    cfg.resolve();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn acceptance_9_determinism_and_resume() {
    criterion(
        9,
        "determinism and resume",
        Duration::from_secs(120),
        || {
            let cfg = determinism_config();
            let init = cfg.initial_policy().unwrap();

            // Two identical runs must produce byte-identical artifacts.
            let dirs = tempfile::tempdir().unwrap();
            let mut emitted = Vec::new();
            for run in ["a", "b"] {
                let out_dir = dirs.path().join(run);
                run_curriculum(
                    &init,
                    &cfg.stages,
                    cfg.config_hash(),
                    cfg.root_seed,
                    &out_dir,
                    &mut (),
                )
                .unwrap();
                let stage_dir = out_dir.join("stage_00_mrl_analog");
                emitted.push((
                    std::fs::read(stage_dir.join("metrics.csv")).unwrap(),
                    std::fs::read(stage_dir.join("checkpoint.ckpt")).unwrap(),
                ));
            }
            assert!(!emitted[0].0.is_empty());
            assert_eq!(
                emitted[0].0, emitted[1].0,
                "metrics CSVs differ between runs"
            );
            assert_eq!(
                emitted[0].1, emitted[1].1,
                "checkpoints differ between runs"
            );

            // Save/reload/continue must equal the uninterrupted run.
            let stage = &cfg.stages[0];
            let full = run_stage(&init, stage, 0, None, &mut ()).unwrap();
            let head = {
                let mut shortened = stage.clone();
                shortened.steps = 12;
                run_stage(&init, &shortened, 0, None, &mut ()).unwrap()
            };
            let saved = Checkpoint {
                config_hash: cfg.config_hash(),
                root_seed: cfg.root_seed,
                stage_seed: stage.seed,
                stage_index: 0,
                stage_name: stage.name.to_string(),
                step: 12,
                params: head.params,
            };
            let path = dirs.path().join("resume.ckpt");
            saved.save(&path).unwrap();
            let loaded = Checkpoint::load(&path).unwrap();
            assert_eq!(loaded.step, 12);
            assert_eq!(loaded.stage_seed, stage.seed);
            assert_eq!(loaded.params.logits, saved.params.logits);

            // The KL anchor on resume is the stage-initial policy.
            let tail = run_stage(&loaded.params, stage, loaded.step, Some(&init), &mut ()).unwrap();
            let stitched: Vec<TrainMetrics> = head
                .metrics
                .iter()
                .chain(tail.metrics.iter())
                .copied()
                .collect();
            assert_eq!(stitched, full.metrics, "resumed metrics diverge");
            assert_eq!(
                tail.params.logits, full.params.logits,
                "resumed params diverge"
            );
        },
    );
}
