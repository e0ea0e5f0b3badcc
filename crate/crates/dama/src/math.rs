//! Small numerically careful scalar helpers shared across modules.

/// Logistic sigmoid `1 / (1 + e^(-x))`, evaluated without overflow for any
/// finite input by branching on the sign of `x`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softplus `ln(1 + e^x)`, the stable form of `-ln σ(-x)`. For large positive
/// `x` this is `x + ln(1 + e^(-x))`, avoiding overflow; for large negative
/// `x` it underflows gracefully to 0.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Compensated (Kahan) summation. Used where a mean must be insensitive to
/// accumulation-order rounding.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_sigmoid_known_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        // Symmetry σ(-x) = 1 - σ(x).
        for x in [0.1, 1.5, 7.0, 30.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn test_sigmoid_extreme_inputs_do_not_overflow() {
        assert_eq!(sigmoid(1e4), 1.0);
        assert_eq!(sigmoid(-1e4), 0.0);
        assert!(sigmoid(f64::MAX).is_finite());
        assert!(sigmoid(-f64::MAX).is_finite());
    }

    #[test]
    fn test_softplus_known_values() {
        assert!((softplus(0.0) - 0.693_147_180_559_945_3).abs() < 1e-16);
        assert!((softplus(-0.08) - 0.653_946_967_317_590_0).abs() < 1e-15);
    }

    #[test]
    fn test_softplus_stable_in_both_tails() {
        // Positive tail: softplus(x) ≈ x, never infinite for finite x.
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        // Negative tail: decays to zero instead of evaluating ln(1 + inf).
        assert_eq!(softplus(-1000.0), 0.0);
        assert!(softplus(-30.0) > 0.0);
    }

    #[test]
    fn test_softplus_positive_everywhere_reasonable() {
        for x in [-20.0, -1.0, 0.0, 1.0, 20.0] {
            assert!(softplus(x) >= 0.0);
        }
    }

    #[test]
    fn test_kahan_sum_matches_naive_on_benign_input() {
        let vals = [1.0, 2.0, 3.5, -0.5];
        assert_eq!(kahan_sum(vals.iter().copied()), 6.0);
    }

    #[test]
    fn test_kahan_sum_beats_naive_on_cancellation() {
        // 1.0 followed by many tiny values that naive summation drops.
        let mut vals = vec![1.0];
        vals.extend(std::iter::repeat(1e-16).take(1000));
        let kahan = kahan_sum(vals.iter().copied());
        assert!((kahan - (1.0 + 1000.0 * 1e-16)).abs() < 1e-15);
    }
}
