use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Learning rate at `step`: linear warmup to the peak over the first
/// `max_steps / 20` steps, then `coef · (1 − progress)^0.5`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.max_steps {
        return Err(Error::IndexOutOfRange {
            what: "lr step",
            index: step,
            len: cfg.max_steps + 1,
        });
    }
    let warmup = cfg.warmup_steps();
    if step <= warmup {
        if warmup == 0 {
            return Ok(cfg.peak_lr);
        }
        return Ok(cfg.peak_lr * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (cfg.max_steps - warmup) as f64;
    Ok(cfg.final_lr_coef * (1.0 - progress).sqrt())
}
