//! Compare batch-selection strategies with paired seeds: every strategy
//! starts from the same initial policy and sees the same rollout randomness
//! at each seed, so differences are attributable to selection alone.
//!
//! Run with: `cargo run --example ablation`

use padsim::cli::{summary_text, SummaryRow};
use padsim::envs::{EnvConfig, TaskKind};
use padsim::grpo::GrpoConfig;
use padsim::pad::{PadConfig, Strategy, TemperatureSchedule};
use padsim::trainer::{run_ablation, PolicyConfig, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = 60;
    let base = StageConfig {
        env: EnvConfig {
            task_kind: TaskKind::DigitSum,
            vocab_size: 12,
            max_len: 8,
            difficulty_range: [0.1, 0.3],
            dataset_size: 16,
            rng_seed: 0, // derived per seed by run_ablation
        },
        steps,
        group_size: 8,
        rollout_batch_prompts: 4,
        pad: PadConfig {
            rho: 0.25,
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
        ..StageConfig::default()
    };
    let policy = PolicyConfig {
        context_order: 1,
        init_scale: 0.3,
    };

    let strategies = [
        Strategy::Pad,
        Strategy::GrpoBaseline,
        Strategy::RandomSampling,
    ];
    let seeds = [101, 102, 103];
    println!(
        "running {} strategies x {} seeds x {steps} steps...",
        strategies.len(),
        seeds.len()
    );
    let outcome = run_ablation(&base, &policy, &strategies, &seeds, &mut ())?;

    let rows: Vec<SummaryRow> = outcome.summary.iter().map(SummaryRow::from).collect();
    print!("\n{}", summary_text(&rows));

    println!("\nper-run terminal accuracy (strategy / seed):");
    for run in &outcome.runs {
        println!(
            "  {:>16} seed {:>3}: terminal {:.3}, AUC {:.3}",
            run.strategy.to_string(),
            run.seed,
            run.terminal_accuracy,
            run.auc
        );
    }
    Ok(())
}
