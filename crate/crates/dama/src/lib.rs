//! Direct preference optimization with per-pair adaptive inverse
//! temperatures, on a small tabular policy.
//!
//! Plain DPO trains every preference pair with one global β. This crate
//! adapts β per pair from two signals:
//!
//! * **data hardness** ([`hardness`]) — an offline coefficient α_D from
//!   sub-sentence similarity scores: pairs whose chosen response is much
//!   more similar to the target than the rejected one are "easy" and get a
//!   larger α_D, while near-ties get a smaller one;
//! * **model responsiveness** ([`responsiveness`]) — an online coefficient
//!   α_M comparing the current batch's reward gaps against a running mean,
//!   with outlier pairs filtered out of the gradient.
//!
//! The effective per-pair temperature is β_C = β·(α_D·α_M) (a weighted-sum
//! combination exists for ablations). Training ([`trainer`]) runs plain
//! gradient descent on a context × vocabulary logits table ([`policy`]),
//! which makes every piece exactly computable and bit-reproducible: same
//! config, same bytes out, regardless of thread count.
//!
//! The pipeline, end to end:
//!
//! 1. [`synth`] generates a corpus of preference pairs with known
//!    easy/hard structure (or bring your own JSONL).
//! 2. [`corpus`] splits responses into sub-sentences and scores them with
//!    a deterministic stand-in for an external similarity model.
//! 3. [`hardness`] turns scores into per-pair δ and α_D annotations.
//! 4. [`trainer`] optimizes the policy, writing per-batch telemetry.
//! 5. [`report`] serializes metrics, evaluation summaries, and manifests.

pub mod config;
pub mod corpus;
pub mod error;
pub mod hardness;
pub mod math;
pub mod objective;
pub mod policy;
pub mod report;
pub mod responsiveness;
pub mod synth;
pub mod trainer;

pub use error::{DamaError, DamaResult};
