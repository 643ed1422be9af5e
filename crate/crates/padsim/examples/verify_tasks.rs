//! Generate synthetic task datasets and verify sampled responses.
//!
//! Each task family produces prompts with a controllable difficulty and a
//! deterministic pass/fail verifier — the reward source for training.
//!
//! Run with: `cargo run --example verify_tasks`

use padsim::envs::{self, EnvConfig, TaskKind};
use padsim::policy::{GenParams, PolicyParams};
use padsim::seeding::rng_for;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let policy = PolicyParams::random_init(12, 1, 16, envs::EOS_TOKEN, 0.5, 1)?;
    let gen = GenParams::default();

    for task_kind in [
        TaskKind::DigitSum,
        TaskKind::ParityEcho,
        TaskKind::PaddingExploit,
    ] {
        let cfg = EnvConfig {
            task_kind,
            vocab_size: 12,
            max_len: 16,
            difficulty_range: [0.2, 0.6],
            dataset_size: 32,
            rng_seed: 9,
        };
        let dataset = envs::generate_dataset(&cfg)?;

        // Sample one rollout per prompt from an untrained policy and count
        // verifier passes: the baseline success rate RL starts from.
        let mut passes = 0u32;
        for (i, prompt) in dataset.iter().enumerate() {
            let mut rng = rng_for(100, &[task_kind as u64, i as u64]);
            let seq =
                policy.sample_sequence(&prompt.prompt_id, &prompt.encoding(), &gen, &mut rng)?;
            passes += u32::from(envs::verify(prompt, &seq)?);
        }
        println!(
            "{task_kind:>16}: {} prompts, untrained pass rate {}/{}",
            dataset.len(),
            passes,
            dataset.len()
        );

        // Show one prompt in detail.
        let prompt = &dataset[0];
        println!(
            "{:>16}  e.g. {} (difficulty {:.2}) prompt tokens {:?}",
            "",
            prompt.prompt_id,
            prompt.difficulty,
            prompt.encoding()
        );
    }
    Ok(())
}
