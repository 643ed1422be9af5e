//! Sweep the efficient-length reward over response lengths and show its
//! piecewise-linear shape: saturation at 1, a linear ramp through the
//! budget, and a floor at 0.
//!
//! Run with: `cargo run --example length_reward`

use padsim::rewards::{length_reward, LengthRewardConfig};

fn main() {
    let cfg = LengthRewardConfig {
        enabled: true,
        alpha: 0.005,
        delta: 0.5,
        l_budget: 400,
        weight: 0.5,
    };

    // The reward is clamp(alpha * (budget - length) + delta, 0, 1):
    //  - at the budget it is exactly delta,
    //  - it saturates at 1 for lengths <= budget - (1 - delta)/alpha,
    //  - it reaches 0 at lengths >= budget + delta/alpha.
    let saturate_at = cfg.l_budget as f64 - (1.0 - cfg.delta) / cfg.alpha;
    let zero_at = cfg.l_budget as f64 + cfg.delta / cfg.alpha;
    println!(
        "alpha={} delta={} budget={}  -> full reward below {saturate_at}, zero above {zero_at}",
        cfg.alpha, cfg.delta, cfg.l_budget
    );

    println!("{:>8} {:>10}", "length", "r_len");
    for length in [1usize, 100, 250, 300, 350, 400, 450, 500, 600] {
        println!("{length:>8} {:>10.4}", length_reward(&cfg, length));
    }

    assert_eq!(length_reward(&cfg, cfg.l_budget), cfg.delta);
    assert_eq!(length_reward(&cfg, saturate_at as usize), 1.0);
    assert_eq!(length_reward(&cfg, zero_at as usize), 0.0);
    println!("fixed points verified: r(budget) = delta, saturation endpoints exact");
}
