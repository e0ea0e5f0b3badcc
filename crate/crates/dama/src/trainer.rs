//! Training loop: batches preference pairs, scales each pair's inverse
//! temperature by data hardness and model responsiveness, and descends the
//! preference loss on the tabular policy.
//!
//! The four modes share one pipeline and differ only in which adaptive
//! pieces are switched on:
//!
//! | mode   | data-aware α_D | model-aware α_M | outlier filter |
//! |--------|----------------|-----------------|----------------|
//! | `dpo`  | off            | off             | off            |
//! | `d2po` | on             | off             | off            |
//! | `mdpo` | off            | on              | on             |
//! | `dama` | on             | on              | on             |
//!
//! With a switch off the corresponding factor is exactly 1.0 (not merely
//! close), so a disabled mode is bit-identical to the simpler method.
//!
//! Determinism: given the same config and inputs, training produces
//! bit-identical parameters and telemetry regardless of thread count.
//! Forward passes run in parallel but are collected back in batch order,
//! and every reduction happens sequentially in that order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::corpus::TokenizedInstance;
use crate::error::{DamaError, DamaResult};
use crate::hardness::{HardnessMode, HardnessRecord};
use crate::objective::{dpo_loss_and_grad, effective_beta, Combine};
use crate::policy::{
    apply_gradient, GradientMatrix, PolicyParams, ReferenceSnapshot, RowGradient,
};
use crate::responsiveness::{
    alpha_model, batch_responsiveness, batch_responsiveness_legacy, normalize_gaps, outlier_mask,
    reward_gaps, FilterStrategy, ResponsivenessState,
};

/// Which adaptive ingredients a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Fixed β for every pair.
    Dpo,
    /// Data-aware only: β scaled by offline hardness.
    D2po,
    /// Model-aware only: β scaled by batch responsiveness, with outlier
    /// filtering.
    Mdpo,
    /// Both signals combined.
    #[default]
    Dama,
}

/// Resolved on/off switches for the pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSwitches {
    pub data_aware: bool,
    pub model_aware: bool,
    pub filtering: bool,
}

/// How to merge the hardness and responsiveness factors into one α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    #[default]
    Multiply,
    Weighted,
}

/// Full training configuration. Unknown keys are rejected when loading
/// from a config file, so typos fail loudly instead of silently using a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Base inverse temperature β.
    pub base_beta: f64,
    pub batch_size: usize,
    /// Pairs retained per batch by the outlier filter (clamped to the
    /// actual batch size for a short final batch).
    pub keep_k: usize,
    /// Decay of the running responsiveness mean.
    pub gamma: f64,
    pub epochs: usize,
    /// Step size for plain gradient descent on the logit table. The loss
    /// gradient carries a factor β/retained ≈ 0.01, so table-scale steps
    /// need a rate far above 1; the default moves implicit reward gaps to
    /// order one within the first epoch on the bundled synthetic corpora,
    /// which keeps the gap normalizer well away from its tiny-scale
    /// cold-start transient.
    pub learning_rate: f64,
    /// `multiply`: α = α_D · α_M. `weighted`: α = (1−ρ)·α_M + ρ·α_D.
    pub combine: CombineRule,
    /// Weight on the data term when `combine = "weighted"`.
    pub rho: f64,
    pub filter: FilterStrategy,
    pub hardness_mode: HardnessMode,
    /// Normalize batch responsiveness by (batch size − keep_k) instead of
    /// the retained count, reproducing an older formulation.
    pub legacy_eq12_norm: bool,
    /// Filter on raw reward gaps instead of normalized ones.
    pub filter_on_raw: bool,
    /// Pin α_D to 1.0 while leaving the rest of the pipeline untouched.
    pub force_alpha_d_one: bool,
    /// Pin α_M to 1.0 and freeze the running mean; the outlier filter
    /// still runs.
    pub force_alpha_m_one: bool,
    /// Guard threshold for near-zero normalizers.
    pub epsilon: f64,
    pub seed: u64,
    /// Number of distinct prompt contexts in the tabular policy.
    pub context_count: usize,
    /// Optional global-norm gradient clip.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Worker threads for the forward pass; results are order-preserving,
    /// so the count never changes the output.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Dama,
            base_beta: 0.1,
            batch_size: 16,
            keep_k: 12,
            gamma: 0.9,
            epochs: 4,
            learning_rate: 150.0,
            combine: CombineRule::Multiply,
            rho: 0.5,
            filter: FilterStrategy::Extremes,
            hardness_mode: HardnessMode::Probabilities,
            legacy_eq12_norm: false,
            filter_on_raw: false,
            force_alpha_d_one: false,
            force_alpha_m_one: false,
            epsilon: 1e-8,
            seed: 0,
            context_count: 64,
            grad_clip: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> DamaResult<()> {
        let bad = |msg: String| Err(DamaError::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.keep_k == 0 || self.keep_k > self.batch_size {
            return bad(format!(
                "keep_k must lie in 1..={}, got {}",
                self.batch_size, self.keep_k
            ));
        }
        if !self.base_beta.is_finite() || self.base_beta <= 0.0 {
            return bad(format!("base_beta must be positive, got {}", self.base_beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.context_count == 0 {
            return bad("context_count must be at least 1".into());
        }
        if let Some(clip) = self.grad_clip {
            if !clip.is_finite() || clip <= 0.0 {
                return bad(format!("grad_clip must be positive, got {clip}"));
            }
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Pipeline switches implied by the mode.
    pub fn switches(&self) -> ModeSwitches {
        match self.mode {
            TrainMode::Dpo => ModeSwitches {
                data_aware: false,
                model_aware: false,
                filtering: false,
            },
            TrainMode::D2po => ModeSwitches {
                data_aware: true,
                model_aware: false,
                filtering: false,
            },
            TrainMode::Mdpo => ModeSwitches {
                data_aware: false,
                model_aware: true,
                filtering: true,
            },
            TrainMode::Dama => ModeSwitches {
                data_aware: true,
                model_aware: true,
                filtering: true,
            },
        }
    }

    fn combine_rule(&self) -> Combine {
        match self.combine {
            CombineRule::Multiply => Combine::Multiply,
            CombineRule::Weighted => Combine::Weighted { rho: self.rho },
        }
    }
}

/// Telemetry for one optimizer step. `running_mean` is the state *before*
/// this batch's update, i.e. the value the batch was normalized against.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub alpha_m: f64,
    /// Mean effective β over all pairs in the batch (masked ones included).
    pub mean_beta_c: f64,
    pub running_mean: f64,
    pub retained_count: usize,
    pub mean_raw_gap: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub reference: ReferenceSnapshot,
    pub reports: Vec<BatchReport>,
    pub final_loss: f64,
}

/// Deterministic visit order for one epoch: a seeded shuffle of `0..n`
/// that depends only on `(seed, epoch, n)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    // Offset by a golden-ratio multiple so each epoch gets its own stream
    // and epoch 0 does not share the policy-init stream.
    let mixed = seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

struct Forward {
    logp_theta_w: f64,
    logp_theta_l: f64,
    delta_w: f64,
    delta_l: f64,
    grad_w: RowGradient,
    grad_l: RowGradient,
}

fn forward_pass(
    policy: &PolicyParams,
    instance: &TokenizedInstance,
    ref_w: f64,
    ref_l: f64,
) -> DamaResult<Forward> {
    let logp_theta_w = policy.log_prob(instance.context_id, &instance.chosen_tokens)?;
    let logp_theta_l = policy.log_prob(instance.context_id, &instance.rejected_tokens)?;
    let grad_w = policy.log_prob_gradient(instance.context_id, &instance.chosen_tokens)?;
    let grad_l = policy.log_prob_gradient(instance.context_id, &instance.rejected_tokens)?;
    Ok(Forward {
        logp_theta_w,
        logp_theta_l,
        delta_w: logp_theta_w - ref_w,
        delta_l: logp_theta_l - ref_l,
        grad_w,
        grad_l,
    })
}

/// Hardness multipliers aligned with `corpus`, or all ones when the data
/// factor is disabled or pinned.
fn alpha_d_by_index(
    config: &TrainConfig,
    corpus: &[TokenizedInstance],
    hardness: &[HardnessRecord],
) -> DamaResult<Vec<f64>> {
    if !config.switches().data_aware || config.force_alpha_d_one {
        return Ok(vec![1.0; corpus.len()]);
    }
    let by_id: HashMap<&str, f64> = hardness
        .iter()
        .map(|r| (r.instance_id.as_str(), r.alpha_d))
        .collect();
    corpus
        .iter()
        .map(|instance| {
            by_id
                .get(instance.instance_id.as_str())
                .copied()
                .ok_or_else(|| DamaError::MissingRecord {
                    kind: "hardness",
                    instance_id: instance.instance_id.clone(),
                })
        })
        .collect()
}

/// Runs the full loop: init policy, snapshot the frozen reference, then for
/// each epoch shuffle, batch, adapt β, and take one gradient step per batch.
///
/// `hardness` may be empty for modes that do not use it.
pub fn run_training(
    config: &TrainConfig,
    corpus: &[TokenizedInstance],
    vocab_size: usize,
    hardness: &[HardnessRecord],
) -> DamaResult<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(DamaError::EmptyCorpus {
            context: "training corpus".into(),
        });
    }
    for instance in corpus {
        if instance.context_id >= config.context_count {
            return Err(DamaError::ContextOutOfRange {
                context_id: instance.context_id,
                context_count: config.context_count,
            });
        }
        for token in instance
            .chosen_tokens
            .iter()
            .chain(instance.rejected_tokens.iter())
        {
            if *token >= vocab_size {
                return Err(DamaError::TokenOutOfRange {
                    token: *token,
                    vocab_size,
                });
            }
        }
        if instance.chosen_tokens.is_empty() || instance.rejected_tokens.is_empty() {
            return Err(DamaError::EmptyTokens);
        }
    }
    let switches = config.switches();
    let alpha_d = alpha_d_by_index(config, corpus, hardness)?;

    let mut policy = PolicyParams::init(config.context_count, vocab_size, config.seed)?;
    let reference = policy.snapshot_reference();
    let mut state = ResponsivenessState::new(config.gamma, config.epsilon)?;

    // The reference never moves, so its per-instance log-probs are computed
    // once up front.
    let mut ref_w = Vec::with_capacity(corpus.len());
    let mut ref_l = Vec::with_capacity(corpus.len());
    for instance in corpus {
        ref_w.push(reference.log_prob(instance.context_id, &instance.chosen_tokens)?);
        ref_l.push(reference.log_prob(instance.context_id, &instance.rejected_tokens)?);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| DamaError::InvalidConfig(format!("thread pool: {e}")))?;

    let mut reports: Vec<BatchReport> = Vec::new();
    pool.install(|| -> DamaResult<()> {
        use rayon::prelude::*;
        for epoch in 0..config.epochs {
            let order = epoch_order(config.seed, epoch, corpus.len());
            for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
                let keep_k = config.keep_k.min(chunk.len());
                // Parallel forward pass; `collect` preserves chunk order.
                let forwards: Vec<Forward> = chunk
                    .par_iter()
                    .map(|&i| forward_pass(&policy, &corpus[i], ref_w[i], ref_l[i]))
                    .collect::<DamaResult<Vec<_>>>()?;

                let theta_w: Vec<f64> = forwards.iter().map(|f| f.logp_theta_w).collect();
                let theta_l: Vec<f64> = forwards.iter().map(|f| f.logp_theta_l).collect();
                let batch_ref_w: Vec<f64> = chunk.iter().map(|&i| ref_w[i]).collect();
                let batch_ref_l: Vec<f64> = chunk.iter().map(|&i| ref_l[i]).collect();
                let raw_gaps =
                    reward_gaps(&theta_w, &batch_ref_w, &theta_l, &batch_ref_l, config.base_beta)?;
                let normalized = normalize_gaps(&raw_gaps, &state);

                let mask = if switches.filtering {
                    let basis = if config.filter_on_raw { &raw_gaps } else { &normalized };
                    outlier_mask(basis, state.running_mean(), keep_k, config.filter)
                } else {
                    vec![true; chunk.len()]
                };

                let (batch_mean, alpha_m) = if switches.model_aware {
                    let batch_mean = if config.legacy_eq12_norm {
                        batch_responsiveness_legacy(&normalized, &mask, keep_k)?
                    } else {
                        batch_responsiveness(&normalized, &mask)?
                    };
                    if config.force_alpha_m_one {
                        (None, 1.0)
                    } else {
                        (Some(batch_mean), alpha_model(batch_mean, &state))
                    }
                } else {
                    (None, 1.0)
                };

                let batch_alpha_d: Vec<f64> = chunk.iter().map(|&i| alpha_d[i]).collect();
                let betas = effective_beta(
                    config.base_beta,
                    &batch_alpha_d,
                    alpha_m,
                    config.combine_rule(),
                )?;

                let delta_w: Vec<f64> = forwards.iter().map(|f| f.delta_w).collect();
                let delta_l: Vec<f64> = forwards.iter().map(|f| f.delta_l).collect();
                let loss_report = dpo_loss_and_grad(&delta_w, &delta_l, &betas, &mask)?;
                if !loss_report.loss.is_finite() {
                    return Err(DamaError::NonFiniteLoss {
                        epoch,
                        batch,
                        loss: loss_report.loss,
                    });
                }

                // Chain rule through the batch mean: each retained pair's
                // parameter-space contribution is (∂ℓ_i/∂Δ) / retained.
                let mut accumulator = GradientMatrix::zeros(config.context_count, vocab_size);
                let inv_retained = 1.0 / loss_report.retained_count as f64;
                for (j, fwd) in forwards.iter().enumerate() {
                    if mask[j] {
                        accumulator
                            .add_row(&fwd.grad_w, loss_report.gradient_wrt_delta_w[j] * inv_retained);
                        accumulator
                            .add_row(&fwd.grad_l, loss_report.gradient_wrt_delta_l[j] * inv_retained);
                    }
                }
                apply_gradient(&mut policy, &accumulator, config.learning_rate, config.grad_clip)?;

                let mean_beta_c =
                    betas.values.iter().sum::<f64>() / betas.values.len() as f64;
                let mean_raw_gap = raw_gaps.iter().sum::<f64>() / raw_gaps.len() as f64;
                reports.push(BatchReport {
                    epoch,
                    batch,
                    loss: loss_report.loss,
                    alpha_m,
                    mean_beta_c,
                    running_mean: state.running_mean(),
                    retained_count: loss_report.retained_count,
                    mean_raw_gap,
                });
                // The running mean moves only after the step, and only when
                // the model-aware factor is live.
                if let Some(batch_mean) = batch_mean {
                    state.update_running_mean(batch_mean);
                }
            }
        }
        Ok(())
    })?;

    let final_loss = reports.last().map(|r| r.loss).unwrap_or(0.0);
    Ok(TrainOutcome {
        policy,
        reference,
        reports,
        final_loss,
    })
}

/// Held-out evaluation of a trained policy against its frozen reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of pairs whose reward gap is strictly positive; a tied gap
    /// counts as a failure.
    pub preference_accuracy: f64,
    pub mean_gap_easy: f64,
    pub mean_gap_hard: f64,
    /// Corpus median δ used to split the buckets: δ above it is easy,
    /// at or below it is hard.
    pub bucket_threshold: f64,
    pub easy_count: usize,
    pub hard_count: usize,
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Computes reward gaps at a fixed β and summarizes accuracy overall and
/// per hardness bucket. Every instance needs a hardness record; buckets
/// are split at the median δ of the evaluated set.
pub fn evaluate(
    policy: &PolicyParams,
    reference: &ReferenceSnapshot,
    corpus: &[TokenizedInstance],
    hardness: &[HardnessRecord],
    beta: f64,
) -> DamaResult<EvalReport> {
    if corpus.is_empty() {
        return Err(DamaError::EmptyCorpus {
            context: "evaluation corpus".into(),
        });
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(DamaError::InvalidConfig(format!(
            "evaluation beta must be positive, got {beta}"
        )));
    }
    let delta_by_id: HashMap<&str, f64> = hardness
        .iter()
        .map(|r| (r.instance_id.as_str(), r.delta))
        .collect();
    let mut gaps = Vec::with_capacity(corpus.len());
    let mut deltas = Vec::with_capacity(corpus.len());
    for instance in corpus {
        let delta = delta_by_id
            .get(instance.instance_id.as_str())
            .copied()
            .ok_or_else(|| DamaError::MissingRecord {
                kind: "hardness",
                instance_id: instance.instance_id.clone(),
            })?;
        let theta_w = policy.log_prob(instance.context_id, &instance.chosen_tokens)?;
        let theta_l = policy.log_prob(instance.context_id, &instance.rejected_tokens)?;
        let ref_w = reference.log_prob(instance.context_id, &instance.chosen_tokens)?;
        let ref_l = reference.log_prob(instance.context_id, &instance.rejected_tokens)?;
        gaps.push(beta * ((theta_w - ref_w) - (theta_l - ref_l)));
        deltas.push(delta);
    }
    let bucket_threshold = median(&deltas);
    let correct = gaps.iter().filter(|&&g| g > 0.0).count();
    let mut easy_sum = 0.0;
    let mut easy_count = 0usize;
    let mut hard_sum = 0.0;
    let mut hard_count = 0usize;
    for (&gap, &delta) in gaps.iter().zip(deltas.iter()) {
        if delta > bucket_threshold {
            easy_sum += gap;
            easy_count += 1;
        } else {
            hard_sum += gap;
            hard_count += 1;
        }
    }
    let mean_or_zero = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(EvalReport {
        preference_accuracy: correct as f64 / corpus.len() as f64,
        mean_gap_easy: mean_or_zero(easy_sum, easy_count),
        mean_gap_hard: mean_or_zero(hard_sum, hard_count),
        bucket_threshold,
        easy_count,
        hard_count,
    })
}
