//! Desk-scale reinforcement-learning training simulator: group-relative
//! policy optimization with prioritized advantage distillation, an efficient
//! length reward, and staged schedules, exercised on tabular autoregressive
//! policies over synthetic verifiable tasks.

pub mod advantage;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod envs;
pub mod grpo;
pub mod manifest;
pub mod metrics;
pub mod pad;
pub mod plot;
pub mod policy;
pub mod rewards;
pub mod seeding;
pub mod trainer;
