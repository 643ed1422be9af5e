//! Prioritized advantage distillation on one batch, compared against the
//! other selection strategies.
//!
//! PAD filters the batch to the effective set (advantage magnitude inside
//! [t_low, t_high]), scores it with a temperature softmax, and samples k'
//! rollouts without replacement. The alternatives: the baseline keeps
//! everything, the filter variant keeps the whole effective set, and random
//! sampling takes k' uniformly.
//!
//! Run with: `cargo run --example pad_distill`

use padsim::advantage::Rollout;
use padsim::pad::{select_strategy, PadConfig, Strategy, TemperatureSchedule};
use padsim::policy::TokenSequence;
use padsim::rewards::RewardBreakdown;

fn rollout(advantage: f64) -> Rollout {
    Rollout {
        seq: TokenSequence {
            prompt_id: "demo".to_string(),
            prompt_tokens: vec![1],
            tokens: vec![2, 10],
        },
        behavior_logprob_per_token: vec![-0.9, -0.3],
        reward: RewardBreakdown {
            r_acc: 0.0,
            r_len: 0.0,
            r_total: 0.0,
        },
        advantage,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Eight rollouts: three stagnant (advantage 0), one outlier (|A| above
    // the band), four informative.
    let advantages = [0.0, 1.5, -0.8, 0.0, 2.4, -1.2, 0.0, 15.0];
    let batch: Vec<Rollout> = advantages.iter().map(|&a| rollout(a)).collect();
    println!("batch advantages: {advantages:?}");

    let cfg = PadConfig {
        t_low: 0.05,
        t_high: 10.0,
        rho: 0.5,
        tau: TemperatureSchedule {
            tau_start: 1.0,
            tau_end: 0.3,
            horizon: 100,
        },
        ..PadConfig::default()
    };

    for strategy in Strategy::ALL {
        let selection = select_strategy(strategy, &batch, &cfg, 0, 42)?;
        println!(
            "{strategy:>16}: effective set {} of {}, k' = {}, selected indices {:?}",
            selection.effective_set_size,
            batch.len(),
            selection.k_prime,
            selection.selected_indices
        );
    }

    // Sharpening the temperature concentrates selection on the largest
    // magnitudes within the band.
    let late = select_strategy(Strategy::Pad, &batch, &cfg, 100, 42)?;
    println!(
        "\nat the temperature floor (tau = {}): indices {:?} — mass shifts toward |A| = 2.4 and 1.5",
        cfg.tau.tau_at(100),
        late.selected_indices
    );

    // An all-stagnant batch produces an empty selection: the trainer's skip
    // signal.
    let stagnant: Vec<Rollout> = (0..4).map(|_| rollout(0.0)).collect();
    let empty = select_strategy(Strategy::Pad, &stagnant, &cfg, 0, 42)?;
    assert!(empty.is_empty());
    println!("all-zero batch -> empty selection (the trainer skips the update)");
    Ok(())
}
