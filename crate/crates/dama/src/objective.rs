//! Adaptive-β preference loss.
//!
//! The per-instance loss is the DPO objective with an instance-specific
//! inverse temperature:
//!
//! ```text
//! z_i = β_i (Δ_w,i − Δ_l,i)        Δ = logπθ(y) − logπref(y)
//! ℓ_i = −ln σ(z_i) = softplus(−z_i)
//! ```
//!
//! where `β_i = β · α_i` combines a per-instance data coefficient α_D and a
//! per-batch model coefficient α_M, either multiplicatively or as a weighted
//! sum. The α values are treated as constants by the gradients (no gradient
//! flows through β_i). The batch loss averages retained instances only:
//! `(Σ mask_i ℓ_i) / Σ mask_i`.

use crate::error::{DamaError, DamaResult};
use crate::math::{sigmoid, softplus};

/// How α_D and α_M are merged into one per-instance α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Combine {
    /// `α_i = α_D,i · α_M`. The default.
    Multiply,
    /// `α_i = (1−ρ)·α_M + ρ·α_D,i`; ρ=0 ignores the data term, ρ=1 ignores
    /// the model term.
    Weighted { rho: f64 },
}

/// Per-instance effective inverse temperatures β_C = β·α, plus the pieces
/// they were combined from.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveBeta {
    /// β_C per instance, index-aligned with the batch.
    pub values: Vec<f64>,
    pub base_beta: f64,
    pub alpha_d: Vec<f64>,
    pub alpha_m: f64,
}

/// `α_i = α_D,i · α_M` elementwise.
pub fn combine_multiplicative(alpha_d: &[f64], alpha_m: f64) -> Vec<f64> {
    alpha_d.iter().map(|&d| d * alpha_m).collect()
}

/// `α_i = (1−ρ)·α_M + ρ·α_D,i` elementwise. `rho` must lie in `[0, 1]`.
pub fn combine_weighted(alpha_d: &[f64], alpha_m: f64, rho: f64) -> Vec<f64> {
    assert!(
        (0.0..=1.0).contains(&rho),
        "rho must lie in [0, 1], got {rho}"
    );
    alpha_d
        .iter()
        .map(|&d| (1.0 - rho) * alpha_m + rho * d)
        .collect()
}

/// Builds the per-instance β_C vector. Fails if `base_beta` is not positive
/// or any combined α is non-positive or non-finite — a β_C ≤ 0 would erase
/// or invert the preference direction, which is always a setup bug.
pub fn effective_beta(
    base_beta: f64,
    alpha_d: &[f64],
    alpha_m: f64,
    combine: Combine,
) -> DamaResult<EffectiveBeta> {
    if !base_beta.is_finite() || base_beta <= 0.0 {
        return Err(DamaError::InvalidConfig(format!(
            "base beta must be positive and finite, got {base_beta}"
        )));
    }
    let alpha = match combine {
        Combine::Multiply => combine_multiplicative(alpha_d, alpha_m),
        Combine::Weighted { rho } => {
            if !(0.0..=1.0).contains(&rho) {
                return Err(DamaError::InvalidConfig(format!(
                    "rho must lie in [0, 1], got {rho}"
                )));
            }
            combine_weighted(alpha_d, alpha_m, rho)
        }
    };
    let values = alpha
        .iter()
        .enumerate()
        .map(|(index, &a)| {
            if !a.is_finite() || a <= 0.0 {
                Err(DamaError::NonPositiveAlpha { index, value: a })
            } else {
                Ok(base_beta * a)
            }
        })
        .collect::<DamaResult<Vec<f64>>>()?;
    Ok(EffectiveBeta {
        values,
        base_beta,
        alpha_d: alpha_d.to_vec(),
        alpha_m,
    })
}

/// Loss and per-instance gradients for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Mean per-instance loss over retained instances.
    pub loss: f64,
    /// ℓ_i for every instance, retained or not.
    pub per_instance_loss: Vec<f64>,
    /// ∂ℓ_i/∂Δ_w,i = −β_i σ(−z_i); exactly 0.0 for masked-out instances.
    pub gradient_wrt_delta_w: Vec<f64>,
    /// ∂ℓ_i/∂Δ_l,i = +β_i σ(−z_i); exactly 0.0 for masked-out instances.
    pub gradient_wrt_delta_l: Vec<f64>,
    /// Σ mask_i, the divisor of the batch loss.
    pub retained_count: usize,
}

/// Evaluates the masked batch loss and its per-instance gradients with
/// respect to the log-ratio differences.
pub fn dpo_loss_and_grad(
    delta_w: &[f64],
    delta_l: &[f64],
    betas: &EffectiveBeta,
    mask: &[bool],
) -> DamaResult<LossReport> {
    let n = delta_w.len();
    for len in [delta_l.len(), betas.values.len(), mask.len()] {
        if len != n {
            return Err(DamaError::LengthMismatch {
                context: "dpo_loss_and_grad inputs",
                left: n,
                right: len,
            });
        }
    }
    let retained_count = mask.iter().filter(|&&m| m).count();
    if retained_count == 0 {
        return Err(DamaError::EmptyMask);
    }

    let mut per_instance_loss = Vec::with_capacity(n);
    let mut gradient_wrt_delta_w = Vec::with_capacity(n);
    let mut gradient_wrt_delta_l = Vec::with_capacity(n);
    let mut loss_sum = 0.0;
    for i in 0..n {
        let beta_i = betas.values[i];
        let z = beta_i * (delta_w[i] - delta_l[i]);
        let loss_i = softplus(-z);
        per_instance_loss.push(loss_i);
        if mask[i] {
            let s = sigmoid(-z);
            gradient_wrt_delta_w.push(-beta_i * s);
            gradient_wrt_delta_l.push(beta_i * s);
            loss_sum += loss_i;
        } else {
            gradient_wrt_delta_w.push(0.0);
            gradient_wrt_delta_l.push(0.0);
        }
    }
    Ok(LossReport {
        loss: loss_sum / retained_count as f64,
        per_instance_loss,
        gradient_wrt_delta_w,
        gradient_wrt_delta_l,
        retained_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_betas(beta: f64, n: usize) -> EffectiveBeta {
        effective_beta(beta, &vec![1.0; n], 1.0, Combine::Multiply).unwrap()
    }

    #[test]
    fn test_combine_multiplicative() {
        let alpha = combine_multiplicative(&[1.2, 0.5], 0.8);
        assert!((alpha[0] - 0.96).abs() < 1e-15);
        assert!((alpha[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn test_combine_weighted_midpoint_example() {
        // ρ=0.5, α_D=1.2, α_M=0.8 → 1.0.
        let alpha = combine_weighted(&[1.2], 0.8, 0.5);
        assert!((alpha[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn test_combine_weighted_endpoints() {
        let alpha_d = [1.7, 0.3];
        // ρ=0 → pure model coefficient.
        assert_eq!(combine_weighted(&alpha_d, 0.9, 0.0), vec![0.9, 0.9]);
        // ρ=1 → pure data coefficient.
        assert_eq!(combine_weighted(&alpha_d, 0.9, 1.0), vec![1.7, 0.3]);
    }

    #[test]
    #[should_panic(expected = "rho must lie in [0, 1]")]
    fn test_combine_weighted_rejects_bad_rho() {
        combine_weighted(&[1.0], 1.0, 1.5);
    }

    #[test]
    fn test_effective_beta_example() {
        let eb = effective_beta(0.1, &[1.2270, 0.9], 1.0, Combine::Multiply).unwrap();
        assert!((eb.values[0] - 0.12270).abs() < 1e-15);
        assert!((eb.values[1] - 0.09).abs() < 1e-15);
        assert_eq!(eb.base_beta, 0.1);
        assert_eq!(eb.alpha_m, 1.0);
    }

    #[test]
    fn test_effective_beta_rejects_non_positive_alpha() {
        let err = effective_beta(0.1, &[1.0, 0.0], 1.0, Combine::Multiply).unwrap_err();
        match err {
            DamaError::NonPositiveAlpha { index, value } => {
                assert_eq!(index, 1);
                assert_eq!(value, 0.0);
            }
            other => panic!("unexpected: {other:?}"),
        }
        assert!(effective_beta(0.1, &[-0.5], 1.0, Combine::Multiply).is_err());
        assert!(effective_beta(0.1, &[f64::NAN], 1.0, Combine::Multiply).is_err());
        // Weighted with ρ=1 exposes a zero α_D the same way.
        assert!(effective_beta(0.1, &[0.0], 1.0, Combine::Weighted { rho: 1.0 }).is_err());
    }

    #[test]
    fn test_effective_beta_rejects_bad_base() {
        assert!(effective_beta(0.0, &[1.0], 1.0, Combine::Multiply).is_err());
        assert!(effective_beta(-0.1, &[1.0], 1.0, Combine::Multiply).is_err());
        assert!(effective_beta(f64::INFINITY, &[1.0], 1.0, Combine::Multiply).is_err());
    }

    #[test]
    fn test_loss_at_zero_margin() {
        let betas = uniform_betas(0.1, 1);
        let report = dpo_loss_and_grad(&[0.4], &[0.4], &betas, &[true]).unwrap();
        assert!((report.loss - 0.693_147_180_559_945_3).abs() < 1e-15);
        // σ(0) = 1/2 → gradient −β/2.
        assert!((report.gradient_wrt_delta_w[0] + 0.05).abs() < 1e-16);
        assert!((report.gradient_wrt_delta_l[0] - 0.05).abs() < 1e-16);
    }

    #[test]
    fn test_loss_frozen_value_small_margin() {
        // β=0.1, Δ_w−Δ_l=0.8 → z=0.08, loss = softplus(−0.08).
        let betas = uniform_betas(0.1, 1);
        let report = dpo_loss_and_grad(&[0.8], &[0.0], &betas, &[true]).unwrap();
        assert!((report.loss - 0.653_946_967_317_590_0).abs() < 1e-14);
        assert!((report.gradient_wrt_delta_w[0] + 0.048_001_065_984_441_82).abs() < 1e-14);
    }

    #[test]
    fn test_loss_decreases_monotonically_to_zero_as_margin_grows() {
        let betas = uniform_betas(1.0, 1);
        let mut last = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 20.0, 100.0, 2000.0] {
            let report = dpo_loss_and_grad(&[margin], &[0.0], &betas, &[true]).unwrap();
            assert!(report.loss >= 0.0);
            assert!(report.loss < last, "not monotone at margin {margin}");
            last = report.loss;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn test_loss_positive_and_stable_for_extreme_negative_margin() {
        let betas = uniform_betas(1.0, 1);
        let report = dpo_loss_and_grad(&[-2000.0], &[0.0], &betas, &[true]).unwrap();
        assert!(report.loss.is_finite());
        assert!((report.loss - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn test_masked_out_instances_do_not_contribute() {
        let betas = uniform_betas(0.1, 3);
        let full = dpo_loss_and_grad(&[0.5, 9.0, -0.2], &[0.0, 0.0, 0.0], &betas, &[true, false, true])
            .unwrap();
        // Gradients of the dropped instance are exactly zero.
        assert_eq!(full.gradient_wrt_delta_w[1], 0.0);
        assert_eq!(full.gradient_wrt_delta_l[1], 0.0);
        // Its loss is still recorded individually but excluded from the mean.
        assert!(full.per_instance_loss[1] > 0.0);
        let expected = (full.per_instance_loss[0] + full.per_instance_loss[2]) / 2.0;
        assert!((full.loss - expected).abs() < 1e-15);
        assert_eq!(full.retained_count, 2);
    }

    #[test]
    fn test_masking_equivalent_to_removal_with_renormalization() {
        let betas = uniform_betas(0.1, 3);
        let masked = dpo_loss_and_grad(
            &[0.5, 9.0, -0.2],
            &[0.1, -1.0, 0.3],
            &betas,
            &[true, false, true],
        )
        .unwrap();
        let betas2 = uniform_betas(0.1, 2);
        let removed =
            dpo_loss_and_grad(&[0.5, -0.2], &[0.1, 0.3], &betas2, &[true, true]).unwrap();
        assert!((masked.loss - removed.loss).abs() < 1e-12);
        assert!((masked.gradient_wrt_delta_w[0] - removed.gradient_wrt_delta_w[0]).abs() < 1e-12);
        assert!((masked.gradient_wrt_delta_w[2] - removed.gradient_wrt_delta_w[1]).abs() < 1e-12);
    }

    #[test]
    fn test_all_zero_mask_is_an_error() {
        let betas = uniform_betas(0.1, 2);
        assert!(matches!(
            dpo_loss_and_grad(&[0.1, 0.2], &[0.0, 0.0], &betas, &[false, false]),
            Err(DamaError::EmptyMask)
        ));
    }

    #[test]
    fn test_length_mismatch_is_an_error() {
        let betas = uniform_betas(0.1, 2);
        assert!(dpo_loss_and_grad(&[0.1], &[0.0, 0.0], &betas, &[true, true]).is_err());
        assert!(dpo_loss_and_grad(&[0.1, 0.2], &[0.0, 0.0], &betas, &[true]).is_err());
    }

    #[test]
    fn test_gradient_pair_is_antisymmetric() {
        let betas = effective_beta(0.1, &[1.3, 0.7], 1.1, Combine::Multiply).unwrap();
        let report =
            dpo_loss_and_grad(&[0.4, -0.6], &[-0.1, 0.2], &betas, &[true, true]).unwrap();
        for i in 0..2 {
            assert_eq!(
                report.gradient_wrt_delta_w[i],
                -report.gradient_wrt_delta_l[i]
            );
        }
    }

    #[test]
    fn test_per_instance_beta_scales_gradient() {
        // Same margins, different β_i: gradient magnitude is β_i·σ(−z_i).
        let betas = effective_beta(0.1, &[2.0, 1.0], 1.0, Combine::Multiply).unwrap();
        let report = dpo_loss_and_grad(&[0.0, 0.0], &[0.0, 0.0], &betas, &[true, true]).unwrap();
        // z=0 for both → σ(−z)=0.5 → magnitudes β_i/2.
        assert!((report.gradient_wrt_delta_w[0] + 0.1).abs() < 1e-15);
        assert!((report.gradient_wrt_delta_w[1] + 0.05).abs() < 1e-15);
    }
}
