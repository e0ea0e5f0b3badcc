//! Online model-responsiveness tracking.
//!
//! During training each batch produces per-instance reward gaps
//!
//! ```text
//! R_i = β [(logπθ(y_w) − logπref(y_w)) − (logπθ(y_l) − logπref(y_l))]
//! ```
//!
//! which are normalized by a running mean R̄, filtered for outliers, and
//! reduced to a batch responsiveness R̄_B. The model coefficient is
//!
//! ```text
//! α_M = σ(R̄_B) / σ(R̄)
//! ```
//!
//! and after the gradient step the running mean is refreshed with an
//! exponential moving average `R̄ ← γ·R̄ + (1−γ)·R̄_B` (γ defaults to 0.9,
//! R̄ starts at 0).

use serde::{Deserialize, Serialize};

use crate::error::{DamaError, DamaResult};
use crate::math::sigmoid;

/// Which instances the outlier filter drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum FilterStrategy {
    /// Keep everything.
    None,
    /// Drop the `N − K` lowest-valued gaps.
    Bottom,
    /// Drop the `N − K` highest-valued gaps.
    Top,
    /// Keep the `K` gaps closest to the reference mean in squared distance
    /// (drops extremes on both sides). The default.
    Extremes,
}

impl Default for FilterStrategy {
    fn default() -> Self {
        FilterStrategy::Extremes
    }
}

/// EMA state for the running mean reward gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsivenessState {
    running_mean: f64,
    gamma: f64,
    epsilon: f64,
    updates: u64,
}

impl ResponsivenessState {
    /// New state with the running mean initialized to 0.
    ///
    /// `gamma` is the EMA momentum in `[0, 1)`; `epsilon` guards the
    /// normalization against division by a near-zero running mean.
    pub fn new(gamma: f64, epsilon: f64) -> DamaResult<Self> {
        if !gamma.is_finite() || !(0.0..1.0).contains(&gamma) {
            return Err(DamaError::InvalidConfig(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(DamaError::InvalidConfig(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(ResponsivenessState {
            running_mean: 0.0,
            gamma,
            epsilon,
            updates: 0,
        })
    }

    pub fn running_mean(&self) -> f64 {
        self.running_mean
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of EMA updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// EMA refresh `R̄ ← γ·R̄ + (1−γ)·R̄_B`. Called exactly once per
    /// optimized batch, after the gradient step.
    pub fn update_running_mean(&mut self, batch_responsiveness: f64) {
        self.running_mean =
            self.gamma * self.running_mean + (1.0 - self.gamma) * batch_responsiveness;
        self.updates += 1;
    }
}

/// Everything the trainer needs to know about one batch's gap statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGapReport {
    pub raw_gaps: Vec<f64>,
    pub normalized_gaps: Vec<f64>,
    pub mask: Vec<bool>,
    pub retained_count: usize,
    pub batch_responsiveness: f64,
    pub alpha_m: f64,
}

/// Per-instance reward gaps at inverse temperature `beta`; the four slices
/// are the policy/reference log-probabilities of the chosen and rejected
/// responses, index-aligned.
pub fn reward_gaps(
    logp_theta_w: &[f64],
    logp_ref_w: &[f64],
    logp_theta_l: &[f64],
    logp_ref_l: &[f64],
    beta: f64,
) -> DamaResult<Vec<f64>> {
    let n = logp_theta_w.len();
    for len in [logp_ref_w.len(), logp_theta_l.len(), logp_ref_l.len()] {
        if len != n {
            return Err(DamaError::LengthMismatch {
                context: "reward_gaps inputs",
                left: n,
                right: len,
            });
        }
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(DamaError::InvalidConfig(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    Ok((0..n)
        .map(|i| beta * ((logp_theta_w[i] - logp_ref_w[i]) - (logp_theta_l[i] - logp_ref_l[i])))
        .collect())
}

/// Divides every gap by the running mean; when `|R̄| < ε` the gaps pass
/// through unchanged (the mean starts at 0, so the first batches are
/// unnormalized by design).
pub fn normalize_gaps(raw_gaps: &[f64], state: &ResponsivenessState) -> Vec<f64> {
    let mean = state.running_mean;
    if mean.abs() < state.epsilon {
        raw_gaps.to_vec()
    } else {
        raw_gaps.iter().map(|g| g / mean).collect()
    }
}

/// Retention mask over a batch of gaps. `true` means the instance stays.
///
/// All strategies retain exactly `min(keep_k, N)` instances (except `None`,
/// which retains all). Ties are broken toward the lower index, which makes
/// the mask deterministic for any input.
pub fn outlier_mask(
    gaps: &[f64],
    reference_mean: f64,
    keep_k: usize,
    strategy: FilterStrategy,
) -> Vec<bool> {
    assert!(keep_k >= 1, "keep_k must be at least 1");
    let n = gaps.len();
    let keep = keep_k.min(n);
    match strategy {
        FilterStrategy::None => vec![true; n],
        FilterStrategy::Extremes => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                let da = (gaps[a] - reference_mean).powi(2);
                let db = (gaps[b] - reference_mean).powi(2);
                da.total_cmp(&db).then(a.cmp(&b))
            });
            let mut mask = vec![false; n];
            for &i in order.iter().take(keep) {
                mask[i] = true;
            }
            mask
        }
        FilterStrategy::Bottom => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| gaps[a].total_cmp(&gaps[b]).then(a.cmp(&b)));
            let mut mask = vec![true; n];
            for &i in order.iter().take(n - keep) {
                mask[i] = false;
            }
            mask
        }
        FilterStrategy::Top => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
            let mut mask = vec![true; n];
            for &i in order.iter().take(n - keep) {
                mask[i] = false;
            }
            mask
        }
    }
}

/// Mean of the retained normalized gaps: `Σ mask_i·R̄_i / Σ mask_i`.
pub fn batch_responsiveness(normalized_gaps: &[f64], mask: &[bool]) -> DamaResult<f64> {
    if normalized_gaps.len() != mask.len() {
        return Err(DamaError::LengthMismatch {
            context: "batch_responsiveness gaps vs mask",
            left: normalized_gaps.len(),
            right: mask.len(),
        });
    }
    let retained = mask.iter().filter(|&&m| m).count();
    if retained == 0 {
        return Err(DamaError::EmptyMask);
    }
    let sum: f64 = normalized_gaps
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|(&g, _)| g)
        .sum();
    Ok(sum / retained as f64)
}

/// Literal-form batch responsiveness `Σ mask_i·R̄_i / (N − K)`, kept for
/// fidelity experiments. When `N − K` is zero (short final batch with K
/// clamped to the batch size) it falls back to dividing by the retained
/// count, which keeps such runs well-defined.
pub fn batch_responsiveness_legacy(
    normalized_gaps: &[f64],
    mask: &[bool],
    keep_k: usize,
) -> DamaResult<f64> {
    if normalized_gaps.len() != mask.len() {
        return Err(DamaError::LengthMismatch {
            context: "batch_responsiveness gaps vs mask",
            left: normalized_gaps.len(),
            right: mask.len(),
        });
    }
    let retained = mask.iter().filter(|&&m| m).count();
    if retained == 0 {
        return Err(DamaError::EmptyMask);
    }
    let sum: f64 = normalized_gaps
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|(&g, _)| g)
        .sum();
    let complement = normalized_gaps.len().saturating_sub(keep_k);
    let divisor = if complement == 0 { retained } else { complement };
    Ok(sum / divisor as f64)
}

/// Model coefficient α_M = σ(R̄_B) / σ(R̄). Strictly positive; equals 1 when
/// the batch responsiveness matches the running mean.
pub fn alpha_model(batch_responsiveness: f64, state: &ResponsivenessState) -> f64 {
    sigmoid(batch_responsiveness) / sigmoid(state.running_mean)
}
