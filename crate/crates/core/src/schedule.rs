//! Polynomial learning-rate decay: `lr(t) = base_lr * (1 - t/T)^power`.

use alloc::format;

use crate::error::{CoreError, Result};

/// Learning rate at iteration `iter` of a `max_iters`-long schedule.
///
/// Monotonically non-increasing in `iter`; reaches exactly 0 at
/// `iter == max_iters`.
pub fn poly_lr(base_lr: f64, iter: u64, max_iters: u64, power: f64) -> Result<f64> {
    if base_lr <= 0.0 {
        return Err(CoreError::Config(format!(
            "base_lr must be > 0, got {base_lr}"
        )));
    }
    if power <= 0.0 {
        return Err(CoreError::Config(format!("power must be > 0, got {power}")));
    }
    if iter > max_iters {
        return Err(CoreError::Range(format!(
            "iter {iter} exceeds max_iters {max_iters}"
        )));
    }
    let frac = 1.0 - iter as f64 / max_iters as f64;
    Ok(base_lr * libm::pow(frac, power))
}
