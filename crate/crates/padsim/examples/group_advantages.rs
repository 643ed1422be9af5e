//! Group-relative advantage estimation: z-scores within a rollout group,
//! and the exact-zero short-circuit for uniform groups.
//!
//! Run with: `cargo run --example group_advantages`

use padsim::advantage::{estimate_advantages, Group, Rollout, DEFAULT_EPS_STABILITY};
use padsim::policy::TokenSequence;
use padsim::rewards::RewardBreakdown;

fn rollout(reward: f64) -> Rollout {
    Rollout {
        seq: TokenSequence {
            prompt_id: "demo".to_string(),
            prompt_tokens: vec![1, 2],
            tokens: vec![3, 10],
        },
        behavior_logprob_per_token: vec![-1.2, -0.4],
        reward: RewardBreakdown {
            r_acc: reward,
            r_len: 0.0,
            r_total: reward,
        },
        advantage: 0.0,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A mixed group: two successes, two failures.
    let mut group = Group {
        prompt_id: "demo".to_string(),
        rollouts: vec![rollout(1.0), rollout(0.0), rollout(1.0), rollout(0.0)],
    };
    estimate_advantages(&mut group, DEFAULT_EPS_STABILITY)?;
    println!("mixed group rewards   [1, 0, 1, 0]");
    let advantages: Vec<f64> = group.rollouts.iter().map(|r| r.advantage).collect();
    println!("advantages            {advantages:.3?}");
    println!(
        "sum = {:.2e} (centered), |A| = reward z-score",
        advantages.iter().sum::<f64>()
    );

    // A uniform group: every reward identical. The estimator short-circuits
    // to exactly 0.0 rather than dividing a zero numerator by epsilon —
    // these rollouts carry no learning signal and will be filtered out of
    // the effective set downstream.
    let mut uniform = Group {
        prompt_id: "demo".to_string(),
        rollouts: vec![rollout(1.0), rollout(1.0), rollout(1.0), rollout(1.0)],
    };
    estimate_advantages(&mut uniform, DEFAULT_EPS_STABILITY)?;
    println!("\nuniform group rewards [1, 1, 1, 1]");
    for r in &uniform.rollouts {
        assert_eq!(r.advantage, 0.0);
    }
    println!("advantages            exactly 0.0 for every rollout (stagnation signal)");
    Ok(())
}
