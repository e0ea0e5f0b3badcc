//! Offline data-hardness annotation.
//!
//! For each preference pair, the sub-sentence similarity scores of both
//! responses are pushed through one shared softmax; the probability-mass
//! difference
//!
//! ```text
//! δ = Σ P(chosen parts) − Σ P(rejected parts)   ∈ (−1, 1)
//! ```
//!
//! measures how separable the pair is (large δ = easy, δ near 0 or negative
//! = hard). The per-instance data coefficient is the hardness relative to
//! the corpus average:
//!
//! ```text
//! α_D = σ(δ) / σ(δ̄),    δ̄ = corpus mean of δ
//! ```
//!
//! An alternative raw-ratio mode uses `δ = ΣC_w / ΣC_l` on the unnormalized
//! scores with a clamped denominator; it exists for ablations and is *not*
//! bounded to (−1, 1).

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::corpus::SimilarityRecord;
use crate::error::{DamaError, DamaResult};
use crate::math::{kahan_sum, sigmoid};

/// Default clamp for the raw-ratio denominator.
pub const DEFAULT_RAW_EPSILON: f64 = 1e-8;

/// How δ is computed from a similarity record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum HardnessMode {
    /// Softmax probability-mass difference, δ ∈ (−1, 1). The default.
    Probabilities,
    /// Raw score-sum ratio ΣC_w / ΣC_l with the denominator clamped away
    /// from zero. Ablation mode.
    RawRatio,
}

impl Default for HardnessMode {
    fn default() -> Self {
        HardnessMode::Probabilities
    }
}

/// Offline hardness annotation for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessRecord {
    pub instance_id: String,
    pub delta: f64,
    pub alpha_d: f64,
}

/// Corpus-level hardness statistics, written next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessSummary {
    pub delta_bar: f64,
    pub count: usize,
    pub mode: HardnessMode,
}

/// Joint softmax over the concatenated chosen+rejected scores, returned as
/// the two per-side probability vectors. Max-subtraction keeps the exponents
/// bounded, so any finite score magnitudes are safe.
pub fn softmax_probabilities(
    chosen_scores: &[f64],
    rejected_scores: &[f64],
) -> DamaResult<(Vec<f64>, Vec<f64>)> {
    if chosen_scores.is_empty() {
        return Err(DamaError::EmptyScoreVector {
            context: "softmax chosen scores",
        });
    }
    if rejected_scores.is_empty() {
        return Err(DamaError::EmptyScoreVector {
            context: "softmax rejected scores",
        });
    }
    let all = chosen_scores.iter().chain(rejected_scores.iter());
    let mut max = f64::NEG_INFINITY;
    for &s in all.clone() {
        if !s.is_finite() {
            return Err(DamaError::NonFinite {
                context: "softmax input scores",
            });
        }
        max = max.max(s);
    }
    let denom: f64 = all.map(|&s| (s - max).exp()).sum();
    let p = |s: f64| (s - max).exp() / denom;
    Ok((
        chosen_scores.iter().map(|&s| p(s)).collect(),
        rejected_scores.iter().map(|&s| p(s)).collect(),
    ))
}

/// Probability-mass difference δ = ΣP_w − ΣP_l, strictly inside (−1, 1).
///
/// The exact difference of two softmax masses is always interior, but with
/// widely separated scores the smaller mass underflows below half an ulp of
/// 1 and the rounded difference lands exactly on ±1. Nudging such results
/// one ulp back inside keeps the interval guarantee unconditional; the
/// adjustment is far below anything downstream can resolve.
pub fn hardness_delta(chosen_probs: &[f64], rejected_probs: &[f64]) -> f64 {
    let pw: f64 = chosen_probs.iter().sum();
    let pl: f64 = rejected_probs.iter().sum();
    let delta = pw - pl;
    if delta >= 1.0 {
        1.0_f64.next_down()
    } else if delta <= -1.0 {
        (-1.0_f64).next_up()
    } else {
        delta
    }
}

/// Raw-ratio δ = ΣC_w / ΣC_l. When |ΣC_l| < `epsilon` the denominator is
/// clamped to ±epsilon, keeping the sign of ΣC_l (+epsilon when it is
/// exactly zero).
pub fn hardness_delta_raw(chosen_scores: &[f64], rejected_scores: &[f64], epsilon: f64) -> f64 {
    debug_assert!(epsilon > 0.0, "raw-ratio epsilon must be positive");
    let num: f64 = chosen_scores.iter().sum();
    let mut den: f64 = rejected_scores.iter().sum();
    if den.abs() < epsilon {
        den = if den < 0.0 { -epsilon } else { epsilon };
    }
    num / den
}

/// Data coefficient α_D = σ(δ) / σ(δ̄). Strictly positive for finite inputs,
/// equal to 1 when δ == δ̄, and strictly increasing in δ.
pub fn alpha_data(delta: f64, delta_bar: f64) -> f64 {
    sigmoid(delta) / sigmoid(delta_bar)
}

fn record_delta(record: &SimilarityRecord, mode: HardnessMode, raw_epsilon: f64) -> DamaResult<f64> {
    if record.chosen_scores.is_empty() {
        return Err(DamaError::EmptyScores {
            instance_id: record.instance_id.clone(),
            side: "chosen",
        });
    }
    if record.rejected_scores.is_empty() {
        return Err(DamaError::EmptyScores {
            instance_id: record.instance_id.clone(),
            side: "rejected",
        });
    }
    match mode {
        HardnessMode::Probabilities => {
            let (pw, pl) = softmax_probabilities(&record.chosen_scores, &record.rejected_scores)
                .map_err(|e| match e {
                    DamaError::NonFinite { .. } => DamaError::NonFiniteScore {
                        instance_id: record.instance_id.clone(),
                    },
                    other => other,
                })?;
            Ok(hardness_delta(&pw, &pl))
        }
        HardnessMode::RawRatio => {
            if record
                .chosen_scores
                .iter()
                .chain(record.rejected_scores.iter())
                .any(|s| !s.is_finite())
            {
                return Err(DamaError::NonFiniteScore {
                    instance_id: record.instance_id.clone(),
                });
            }
            Ok(hardness_delta_raw(
                &record.chosen_scores,
                &record.rejected_scores,
                raw_epsilon,
            ))
        }
    }
}

/// One pass over all similarity records: per-instance δ, the corpus mean δ̄,
/// and per-instance α_D relative to δ̄ (σ(δ̄) is evaluated once).
///
/// δ̄ is accumulated over records sorted by instance id with compensated
/// summation, so it is bit-identical under any permutation of the input.
/// Output records keep the input order.
pub fn annotate_corpus(
    scores: &[SimilarityRecord],
    mode: HardnessMode,
    raw_epsilon: f64,
) -> DamaResult<(Vec<HardnessRecord>, HardnessSummary)> {
    if scores.is_empty() {
        return Err(DamaError::EmptyCorpus {
            context: "hardness annotation needs at least one score record",
        });
    }
    let mut deltas = Vec::with_capacity(scores.len());
    for record in scores {
        deltas.push(record_delta(record, mode, raw_epsilon)?);
    }

    let mut ordered: Vec<(&str, f64)> = scores
        .iter()
        .zip(deltas.iter())
        .map(|(r, &d)| (r.instance_id.as_str(), d))
        .collect();
    ordered.sort_by(|a, b| a.0.cmp(b.0));
    let delta_bar = kahan_sum(ordered.iter().map(|&(_, d)| d)) / scores.len() as f64;

    let sigmoid_delta_bar = sigmoid(delta_bar);
    let records = scores
        .iter()
        .zip(deltas.iter())
        .map(|(record, &delta)| HardnessRecord {
            instance_id: record.instance_id.clone(),
            delta,
            alpha_d: sigmoid(delta) / sigmoid_delta_bar,
        })
        .collect();
    let summary = HardnessSummary {
        delta_bar,
        count: scores.len(),
        mode,
    };
    Ok((records, summary))
}

pub fn write_hardness_records(path: &Path, records: &[HardnessRecord]) -> DamaResult<()> {
    crate::corpus::write_jsonl(path, records)
}

/// Loads hardness records, rejecting empty ids, non-finite δ, and
/// non-positive α_D (a zero or negative coefficient would erase or invert
/// a pair's preference direction downstream).
pub fn load_hardness_records(path: &Path) -> DamaResult<Vec<HardnessRecord>> {
    let mut out = Vec::new();
    for (line, record) in crate::corpus::load_jsonl::<HardnessRecord>(path)? {
        let invalid = |detail: String| DamaError::InvalidRecord {
            path: path.to_path_buf(),
            line,
            detail,
        };
        if record.instance_id.is_empty() {
            return Err(invalid("empty instance_id".to_string()));
        }
        if !record.delta.is_finite() {
            return Err(invalid(format!(
                "instance {:?} has non-finite delta",
                record.instance_id
            )));
        }
        if !record.alpha_d.is_finite() || record.alpha_d <= 0.0 {
            return Err(invalid(format!(
                "instance {:?} has non-positive alpha_d {}",
                record.instance_id, record.alpha_d
            )));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_hardness_summary(path: &Path, summary: &HardnessSummary) -> DamaResult<()> {
    let body = serde_json::to_string_pretty(summary).map_err(|source| DamaError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, body + "\n").map_err(|source| DamaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_hardness_summary(path: &Path) -> DamaResult<HardnessSummary> {
    let bytes = std::fs::read(path).map_err(|source| DamaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| DamaError::Json {
        path: path.to_path_buf(),
        source,
    })
}
