//! Reward terms for planar locomotion tasks, usable as building blocks for
//! custom environments.

/// Forward progress reward `max(dx / 10, 0)`.
pub fn reward_forward_clipped(delta_x: f64) -> f64 {
    (delta_x / 10.0).max(0.0)
}

/// Height-gated forward reward with an orientation penalty:
/// `((h > 0.8) * (max(dx, 0) + 1) - 0.1 * |y_rot|) / 10`.
pub fn reward_upright_forward(h_torso: f64, delta_x: f64, y_rot_norm: f64) -> f64 {
    let upright = if h_torso > 0.8 { 1.0 } else { 0.0 };
    (upright * (delta_x.max(0.0) + 1.0) - y_rot_norm * 0.1) / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn forward_clipped_values() {
        assert_abs_diff_eq!(reward_forward_clipped(5.0), 0.5);
        assert_eq!(reward_forward_clipped(-1.0), 0.0);
        assert_eq!(reward_forward_clipped(0.0), 0.0);
    }

    #[test]
    fn upright_forward_values() {
        assert_abs_diff_eq!(reward_upright_forward(1.0, 1.0, 0.0), 0.2, epsilon = 1e-15);
        assert_eq!(reward_upright_forward(0.5, 9.9, 0.0), 0.0);
        assert_abs_diff_eq!(reward_upright_forward(1.0, 0.0, 1.0), 0.09, epsilon = 1e-15);
        // threshold is strict
        assert_eq!(reward_upright_forward(0.8, 1.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn forward_clipped_nonnegative_monotone(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(reward_forward_clipped(lo) >= 0.0);
            prop_assert!(reward_forward_clipped(lo) <= reward_forward_clipped(hi));
        }
    }
}
