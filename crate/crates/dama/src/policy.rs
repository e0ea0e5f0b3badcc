//! Toy context-conditioned unigram policy.
//!
//! The policy is a logits table of shape `context_count × vocab_size`. A
//! response's log-probability under context `c` is the sum of per-token
//! log-softmax values of row `c`:
//!
//! ```text
//! logπ(y | c) = Σ_t  log softmax(logits[c])[y_t]
//! ```
//!
//! The gradient of that quantity with respect to row `c` has the closed form
//! `count_v(y) − |y|·softmax(logits[c])[v]`, which sums to zero over the
//! vocabulary. Optimization is plain gradient descent on the table.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{DamaError, DamaResult};

/// Half-width of the uniform initialization range for logits.
const INIT_RANGE: f64 = 0.1;

/// Trainable logits table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    context_count: usize,
    vocab_size: usize,
    /// Row-major `context_count × vocab_size` logits.
    logits: Vec<f64>,
}

impl PolicyParams {
    /// Fresh table with logits drawn i.i.d. from `U[-0.1, 0.1]` using a
    /// seeded reproducible generator: same seed, same table, elementwise.
    pub fn init(context_count: usize, vocab_size: usize, seed: u64) -> DamaResult<Self> {
        if context_count == 0 || vocab_size == 0 {
            return Err(DamaError::InvalidConfig(format!(
                "policy table needs at least one context and one token, got {context_count}x{vocab_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(-INIT_RANGE, INIT_RANGE);
        let logits = (0..context_count * vocab_size)
            .map(|_| rng.sample(dist))
            .collect();
        Ok(PolicyParams {
            context_count,
            vocab_size,
            logits,
        })
    }

    /// Table with explicit row-major logits, e.g. for tests that need a
    /// hand-built or perturbed policy.
    pub fn from_logits(
        context_count: usize,
        vocab_size: usize,
        logits: Vec<f64>,
    ) -> DamaResult<Self> {
        let params = PolicyParams {
            context_count,
            vocab_size,
            logits,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn context_count(&self) -> usize {
        self.context_count
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Shape and finiteness check for tables read from disk.
    pub fn validate(&self) -> DamaResult<()> {
        if self.context_count == 0
            || self.vocab_size == 0
            || self.logits.len() != self.context_count * self.vocab_size
        {
            return Err(DamaError::InvalidConfig(format!(
                "logits length {} does not match shape {}x{}",
                self.logits.len(),
                self.context_count,
                self.vocab_size
            )));
        }
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(DamaError::InvalidConfig(
                "logits contain a non-finite value".to_string(),
            ));
        }
        Ok(())
    }

    fn row(&self, context_id: usize) -> DamaResult<&[f64]> {
        if context_id >= self.context_count {
            return Err(DamaError::ContextOutOfRange {
                context_id,
                context_count: self.context_count,
            });
        }
        let start = context_id * self.vocab_size;
        Ok(&self.logits[start..start + self.vocab_size])
    }

    /// Log-softmax of one context row, computed with max subtraction so any
    /// finite logit magnitudes are safe.
    pub fn log_softmax_row(&self, context_id: usize) -> DamaResult<Vec<f64>> {
        let row = self.row(context_id)?;
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        Ok(row.iter().map(|&v| v - lse).collect())
    }

    /// Sum of per-token log-softmax values for a response under a context.
    pub fn log_prob(&self, context_id: usize, tokens: &[usize]) -> DamaResult<f64> {
        if tokens.is_empty() {
            return Err(DamaError::EmptyTokens);
        }
        let log_softmax = self.log_softmax_row(context_id)?;
        let mut total = 0.0;
        for &tok in tokens {
            if tok >= self.vocab_size {
                return Err(DamaError::TokenOutOfRange {
                    token: tok,
                    vocab_size: self.vocab_size,
                });
            }
            total += log_softmax[tok];
        }
        Ok(total)
    }

    /// Gradient of [`log_prob`](Self::log_prob) with respect to the context
    /// row: `count_v(tokens) − |tokens|·softmax[v]`. Sums to zero over the
    /// vocabulary.
    pub fn log_prob_gradient(&self, context_id: usize, tokens: &[usize]) -> DamaResult<RowGradient> {
        if tokens.is_empty() {
            return Err(DamaError::EmptyTokens);
        }
        let log_softmax = self.log_softmax_row(context_id)?;
        let mut values: Vec<f64> = log_softmax
            .iter()
            .map(|&l| -(tokens.len() as f64) * l.exp())
            .collect();
        for &tok in tokens {
            if tok >= self.vocab_size {
                return Err(DamaError::TokenOutOfRange {
                    token: tok,
                    vocab_size: self.vocab_size,
                });
            }
            values[tok] += 1.0;
        }
        Ok(RowGradient {
            context_id,
            values,
        })
    }

    /// Deep-copies the current table as the frozen reference.
    pub fn snapshot_reference(&self) -> ReferenceSnapshot {
        ReferenceSnapshot {
            params: self.clone(),
        }
    }
}

/// Gradient of one response's log-probability: only one context row is
/// nonzero, so just that row is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient {
    pub context_id: usize,
    /// Dense row of length `vocab_size`.
    pub values: Vec<f64>,
}

/// Immutable copy of the policy at reference time. Offers read access only;
/// nothing can mutate it after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot {
    params: PolicyParams,
}

impl ReferenceSnapshot {
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn log_prob(&self, context_id: usize, tokens: &[usize]) -> DamaResult<f64> {
        self.params.log_prob(context_id, tokens)
    }
}

/// Dense gradient accumulator with the same shape as the policy table.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    context_count: usize,
    vocab_size: usize,
    values: Vec<f64>,
}

impl GradientMatrix {
    pub fn zeros(context_count: usize, vocab_size: usize) -> Self {
        GradientMatrix {
            context_count,
            vocab_size,
            values: vec![0.0; context_count * vocab_size],
        }
    }

    /// Adds `scale · row` into the accumulator.
    pub fn add_row(&mut self, row: &RowGradient, scale: f64) {
        debug_assert!(row.context_id < self.context_count);
        debug_assert_eq!(row.values.len(), self.vocab_size);
        let start = row.context_id * self.vocab_size;
        for (slot, &g) in self.values[start..start + self.vocab_size]
            .iter_mut()
            .zip(row.values.iter())
        {
            *slot += scale * g;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entry(&self, context_id: usize, token: usize) -> f64 {
        self.values[context_id * self.vocab_size + token]
    }
}

/// One plain gradient-descent step `logits ← logits − lr·g`, with an
/// optional global-norm clip applied to the whole gradient first.
pub fn apply_gradient(
    params: &mut PolicyParams,
    gradient: &GradientMatrix,
    learning_rate: f64,
    clip: Option<f64>,
) -> DamaResult<()> {
    if gradient.context_count != params.context_count || gradient.vocab_size != params.vocab_size {
        return Err(DamaError::ShapeMismatch {
            param_rows: params.context_count,
            param_cols: params.vocab_size,
            grad_rows: gradient.context_count,
            grad_cols: gradient.vocab_size,
        });
    }
    if !learning_rate.is_finite() || learning_rate <= 0.0 {
        return Err(DamaError::InvalidConfig(format!(
            "learning rate must be positive and finite, got {learning_rate}"
        )));
    }
    let mut scale = 1.0;
    if let Some(max_norm) = clip {
        if !max_norm.is_finite() || max_norm <= 0.0 {
            return Err(DamaError::InvalidConfig(format!(
                "gradient clip must be positive and finite, got {max_norm}"
            )));
        }
        let norm = gradient.global_norm();
        if norm > max_norm {
            scale = max_norm / norm;
        }
    }
    let step = learning_rate * scale;
    for (theta, &g) in params.logits.iter_mut().zip(gradient.values.iter()) {
        *theta -= step * g;
    }
    Ok(())
}

/// Serialized training state: the optimized table plus the frozen reference,
/// both at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub policy: PolicyParams,
    pub reference: PolicyParams,
}

impl Checkpoint {
    pub fn new(policy: PolicyParams, reference: &ReferenceSnapshot) -> Self {
        Checkpoint {
            policy,
            reference: reference.params().clone(),
        }
    }

    pub fn reference_snapshot(&self) -> ReferenceSnapshot {
        ReferenceSnapshot {
            params: self.reference.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> DamaResult<()> {
        let body = serde_json::to_string(self).map_err(|source| DamaError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, body).map_err(|source| DamaError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> DamaResult<Self> {
        let bytes = std::fs::read(path).map_err(|source| DamaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let checkpoint: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|source| DamaError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        checkpoint.policy.validate()?;
        checkpoint.reference.validate()?;
        if checkpoint.policy.context_count != checkpoint.reference.context_count
            || checkpoint.policy.vocab_size != checkpoint.reference.vocab_size
        {
            return Err(DamaError::InvalidConfig(
                "checkpoint policy and reference shapes differ".to_string(),
            ));
        }
        Ok(checkpoint)
    }
}
