//! Cosine learning-rate annealing.

/// Cosine schedule from `lr0` down to `lr_min` over `total_steps`:
/// `lr_min + 0.5 (lr0 - lr_min) (1 + cos(pi * step / total_steps))`.
///
/// Evaluated in f64 and rounded once, so `step = 0` yields exactly `lr0` and
/// `step = total_steps` exactly `lr_min`. Steps beyond `total_steps` clamp to
/// `lr_min`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f32, lr_min: f32) -> f32 {
    assert!(total_steps > 0, "cosine_lr needs total_steps >= 1");
    if step >= total_steps {
        return lr_min;
    }
    let frac = step as f64 / total_steps as f64;
    let scale = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
    (lr_min as f64 + (lr0 as f64 - lr_min as f64) * scale) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        assert_eq!(cosine_lr(0, 1000, 5e-4, 0.0), 5e-4);
        assert_eq!(cosine_lr(1000, 1000, 5e-4, 0.0), 0.0);
        assert_eq!(cosine_lr(0, 7, 1.0, 0.25), 1.0);
        assert_eq!(cosine_lr(7, 7, 1.0, 0.25), 0.25);
    }

    #[test]
    fn midpoint_is_the_mean_of_the_extremes() {
        assert_eq!(cosine_lr(500, 1000, 1.0, 0.0), 0.5);
        let (lr0, lr_min) = (6e-4f32, 2e-4f32);
        let mean = ((lr0 as f64 + lr_min as f64) / 2.0) as f32;
        assert_eq!(cosine_lr(50, 100, lr0, lr_min), mean);
    }

    #[test]
    fn trace_is_monotone_decreasing_and_clamps_past_the_end() {
        let total = 97;
        let mut last = f32::INFINITY;
        for step in 0..=total {
            let lr = cosine_lr(step, total, 5e-4, 1e-6);
            assert!(lr < last, "step {step}: {lr} !< {last}");
            assert!((1e-6..=5e-4).contains(&lr));
            last = lr;
        }
        assert_eq!(cosine_lr(total + 50, total, 5e-4, 1e-6), 1e-6);
    }

    #[test]
    #[should_panic(expected = "total_steps")]
    fn zero_total_steps_is_a_contract_violation() {
        cosine_lr(0, 0, 5e-4, 0.0);
    }
}
