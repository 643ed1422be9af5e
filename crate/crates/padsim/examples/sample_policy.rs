//! Sample rollouts from a tabular autoregressive policy and inspect their
//! log-probabilities and entropy.
//!
//! Run with: `cargo run --example sample_policy`

use padsim::policy::{GenParams, PolicyParams};
use padsim::seeding::rng_for;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A small policy: vocabulary of 12 tokens, order-2 contexts, responses
    // up to 16 tokens, token 10 ends a sequence.
    let policy = PolicyParams::random_init(12, 2, 16, 10, 0.8, 42)?;
    println!(
        "policy table: {} contexts x {} tokens",
        policy.context_rows(),
        policy.vocab_size
    );

    let gen = GenParams {
        temperature: 1.0,
        top_p: 0.95,
    };
    let prompt = [3, 1, 4];
    let mut rng = rng_for(7, &[1]);

    let mut sequences = Vec::new();
    for i in 0..5 {
        let seq = policy.sample_sequence("demo", &prompt, &gen, &mut rng)?;
        let lp = policy.sequence_logprob(&seq)?;
        println!(
            "rollout {i}: {:>2} tokens {:?} logprob {:.3}",
            seq.len(),
            seq.tokens,
            lp.total
        );
        sequences.push(seq);
    }

    // Mean per-token entropy of the policy over the states these rollouts
    // visited — the exploration signal the trainer logs every step.
    println!(
        "mean per-token entropy: {:.4} nats (uniform would be {:.4})",
        policy.policy_entropy(&sequences)?,
        (12f64).ln()
    );

    // Greedy decoding (temperature ~ 0) is deterministic.
    let greedy = GenParams {
        temperature: 1e-9,
        top_p: 1.0,
    };
    let a = policy.sample_sequence("demo", &prompt, &greedy, &mut rng)?;
    let b = policy.sample_sequence("demo", &prompt, &greedy, &mut rng)?;
    assert_eq!(a.tokens, b.tokens);
    println!("greedy rollout: {:?}", a.tokens);
    Ok(())
}
