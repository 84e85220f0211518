use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const DEFAULT_BASE_LR: f64 = 1e-4;
pub const DEFAULT_WARMUP_RATIO: f64 = 0.03;

/// Number of warmup steps, `ceil(ratio * total)`. The product is nudged down
/// by 1e-9 so that e.g. `0.03 * 100` rounding up to `3.0000000000000004`
/// still yields 3.
pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    ((warmup_ratio * total_steps as f64 - 1e-9).ceil().max(0.0) as usize).min(total_steps)
}

/// Linear ramp from 0 to `base_lr` over the warmup steps, then cosine decay
/// to 0 at `total_steps`.
pub fn cosine_warmup_lr(step: usize, total_steps: usize, base_lr: f64, warmup_ratio: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::StepOutOfRange { step, total: total_steps });
    }
    let warmup = warmup_steps(total_steps, warmup_ratio);
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    let decay = total_steps - warmup;
    if decay == 0 {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / decay as f64;
    Ok(0.5 * base_lr * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_at_end_of_warmup() {
        for total in [1, 10, 100, 1000, 1500] {
            let w = warmup_steps(total, DEFAULT_WARMUP_RATIO);
            let lr = cosine_warmup_lr(w, total, DEFAULT_BASE_LR, DEFAULT_WARMUP_RATIO).unwrap();
            assert!((lr - 1e-4).abs() < 1e-18, "total {total}: {lr}");
        }
    }

    #[test]
    fn endpoints() {
        assert_eq!(cosine_warmup_lr(0, 1000, 1e-4, 0.03).unwrap(), 0.0);
        assert!(cosine_warmup_lr(1000, 1000, 1e-4, 0.03).unwrap().abs() < 1e-20);
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(
            cosine_warmup_lr(11, 10, 1e-4, 0.03),
            Err(Error::StepOutOfRange { step: 11, total: 10 })
        ));
    }

    #[test]
    fn monotone_pieces() {
        let total = 200;
        let w = warmup_steps(total, 0.03);
        let lrs: Vec<f64> = (0..=total).map(|s| cosine_warmup_lr(s, total, 1.0, 0.03).unwrap()).collect();
        assert!(lrs[..=w].windows(2).all(|p| p[0] < p[1]));
        assert!(lrs[w..].windows(2).all(|p| p[0] >= p[1]));
    }
}
