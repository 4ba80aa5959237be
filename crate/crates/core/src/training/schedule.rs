use super::config::{Schedule, TrainConfig};

/// Learning rate for update `step` (1-based; `step = steps` is the last).
///
/// Warmup rises linearly from 0 to `lr` over `warmup_steps`, then decays
/// linearly to 0 at `steps`. With no warmup, or under `LinearDecay`, the rate
/// decays from `lr` at step 0.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let steps = cfg.steps as f64;
    let s = step.min(cfg.steps) as f64;
    let warmup = match cfg.schedule {
        Schedule::WarmupLinearDecay => cfg.warmup_steps.min(cfg.steps) as f64,
        Schedule::LinearDecay => 0.0,
    };
    if s < warmup {
        cfg.lr * s / warmup
    } else {
        cfg.lr * (steps - s) / (steps - warmup)
    }
}
