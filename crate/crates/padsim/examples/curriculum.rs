//! Run a two-stage curriculum — a KL-free first stage, then a KL-anchored
//! second stage with entropy decay — and inspect the persisted artifacts.
//!
//! Run with: `cargo run --example curriculum`

use padsim::checkpoint::Checkpoint;
use padsim::config::RunConfig;
use padsim::envs::TaskKind;
use padsim::metrics::read_metrics_csv;
use padsim::trainer::{run_curriculum, StageName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Configure through RunConfig so seeds and horizons resolve exactly as
    // they do for the CLI.
    let mut cfg = RunConfig {
        root_seed: 77,
        ..RunConfig::default()
    };
    cfg.policy.context_order = 1;
    {
        let stage = &mut cfg.stages[0];
        stage.env.task_kind = TaskKind::DigitSum;
        stage.env.max_len = 8;
        stage.env.dataset_size = 16;
        stage.env.difficulty_range = [0.05, 0.15];
        stage.steps = 40;
        stage.group_size = 8;
        stage.rollout_batch_prompts = 4;
        stage.grpo.learning_rate = 0.1;
    }
    let mut second = cfg.stages[0].clone();
    second.name = StageName::TrlAnalog;
    second.steps = 20;
    second.grpo.kl_enabled = true; // anchored to this stage's initial policy
    second.grpo.kl_coef = 0.05;
    cfg.stages.push(second);

    cfg.resolve();
    cfg.validate().map_err(|v| v.join("; "))?;

    let out_dir = std::env::temp_dir().join("padsim_curriculum_example");
    let outcome = run_curriculum(
        &cfg.initial_policy()?,
        &cfg.stages,
        cfg.config_hash(),
        cfg.root_seed,
        &out_dir,
        &mut (),
    )?;

    println!("artifacts under {}:", out_dir.display());
    for stage in &outcome.stages {
        let rows = read_metrics_csv(&stage.metrics_path)?;
        let ckpt = Checkpoint::load(&stage.checkpoint_path)?;
        println!(
            "  stage {} ({}): {} metric rows, final accuracy {:.3}, checkpoint at step {}",
            stage.stage_index,
            stage.stage_name,
            rows.len(),
            rows.last().map(|m| m.reward_accuracy).unwrap_or(0.0),
            ckpt.step
        );
        assert_eq!(ckpt.config_hash, cfg.config_hash());
    }

    // The second stage's checkpoint holds the curriculum's final parameters.
    let last = Checkpoint::load(&outcome.stages[1].checkpoint_path)?;
    assert_eq!(last.params.logits, outcome.final_params.logits);
    println!("final parameters match the last checkpoint bit for bit");
    Ok(())
}
