//! Train one stage end to end on the digit-sum task and watch reward
//! accuracy move.
//!
//! Run with: `cargo run --example train_stage`

use padsim::envs::{EnvConfig, TaskKind};
use padsim::grpo::GrpoConfig;
use padsim::pad::{PadConfig, TemperatureSchedule};
use padsim::policy::PolicyParams;
use padsim::trainer::{run_stage, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = 120;
    let cfg = StageConfig {
        env: EnvConfig {
            task_kind: TaskKind::DigitSum,
            vocab_size: 12,
            max_len: 8,
            difficulty_range: [0.05, 0.15],
            dataset_size: 16,
            rng_seed: 11,
        },
        steps,
        group_size: 8,
        rollout_batch_prompts: 4,
        pad: PadConfig {
            tau: TemperatureSchedule {
                tau_start: 1.0,
                tau_end: 0.3,
                horizon: steps,
            },
            ..PadConfig::default()
        },
        grpo: GrpoConfig {
            learning_rate: 0.1,
            ..GrpoConfig::default()
        },
        seed: 21,
        ..StageConfig::default()
    };

    let initial = PolicyParams::random_init(
        cfg.env.vocab_size,
        1, // context order
        cfg.env.max_len,
        padsim::envs::EOS_TOKEN,
        0.3,
        5,
    )?;

    let outcome = run_stage(&initial, &cfg, 0, None, &mut ())?;

    println!(
        "{:>6} {:>9} {:>9} {:>9} {:>6}",
        "step", "accuracy", "entropy", "|E|/N", "skip"
    );
    for row in outcome.metrics.iter().step_by(20) {
        println!(
            "{:>6} {:>9.3} {:>9.3} {:>9.2} {:>6}",
            row.step, row.reward_accuracy, row.entropy, row.effective_set_fraction, row.skipped
        );
    }

    let first = &outcome.metrics[0];
    let last = &outcome.metrics[steps - 1];
    println!(
        "\nreward accuracy {:.3} -> {:.3} over {steps} steps ({} skipped)",
        first.reward_accuracy,
        last.reward_accuracy,
        outcome.metrics.iter().filter(|m| m.skipped).count()
    );
    Ok(())
}
