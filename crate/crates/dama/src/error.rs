//! Crate-wide error type.
//!
//! Every fallible operation returns [`DamaResult`]. Errors split into two
//! families that map onto process exit codes: problems with user-supplied
//! input (bad files, bad config, missing records — exit code 1) and internal
//! invariant violations that indicate a bug or a numerically broken run
//! (exit code 2).

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type DamaResult<T> = Result<T, DamaError>;

#[derive(Debug, thiserror::Error)]
pub enum DamaError {
    /// I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A JSONL record that does not parse; `line` is 1-based.
    #[error("{path}:{line}: malformed record: {detail}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    /// A record that parses but violates a field invariant; `line` is 1-based.
    #[error("{path}:{line}: invalid record: {detail}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    /// Two records share an id.
    #[error("{path}:{line}: duplicate instance id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    /// An operation that needs at least one instance received none.
    #[error("empty corpus: {context}")]
    EmptyCorpus { context: &'static str },

    /// Similarity scores contained a NaN or infinity.
    #[error("non-finite similarity score for instance {instance_id:?}")]
    NonFiniteScore { instance_id: String },

    /// A score vector that must be non-empty was empty.
    #[error("empty score vector in {context}")]
    EmptyScoreVector { context: &'static str },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A score record with an empty chosen or rejected part list.
    #[error("instance {instance_id:?} has no {side} sub-sentence scores")]
    EmptyScores {
        instance_id: String,
        side: &'static str,
    },

    /// An instance id that has no similarity/hardness record.
    #[error("no {kind} record for instance {instance_id:?}")]
    MissingRecord {
        kind: &'static str,
        instance_id: String,
    },

    /// Configuration that fails validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Parallel lists that should be equally long are not.
    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// A retention mask with no retained instances.
    #[error("mask retains no instances")]
    EmptyMask,

    /// A combined α that would zero or invert the preference direction.
    #[error("non-positive effective alpha {value} at index {index}")]
    NonPositiveAlpha { index: usize, value: f64 },

    /// Context id outside the policy table.
    #[error("context id {context_id} out of range (context_count = {context_count})")]
    ContextOutOfRange {
        context_id: usize,
        context_count: usize,
    },

    /// Token id outside the policy table.
    #[error("token id {token} out of range (vocab_size = {vocab_size})")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    /// A log-probability over an empty token sequence is undefined.
    #[error("empty token sequence")]
    EmptyTokens,

    /// Gradient/parameter shape disagreement.
    #[error("shape mismatch: parameters are {param_rows}x{param_cols}, gradient is {grad_rows}x{grad_cols}")]
    ShapeMismatch {
        param_rows: usize,
        param_cols: usize,
        grad_rows: usize,
        grad_cols: usize,
    },

    /// Training produced a non-finite loss; the run is aborted.
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    /// JSON (de)serialization failure outside line-oriented corpus files.
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl DamaError {
    /// Process exit code for this error: 1 for user/input problems,
    /// 2 for internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            DamaError::Io { .. }
            | DamaError::MalformedRecord { .. }
            | DamaError::InvalidRecord { .. }
            | DamaError::DuplicateId { .. }
            | DamaError::EmptyCorpus { .. }
            | DamaError::NonFiniteScore { .. }
            | DamaError::EmptyScoreVector { .. }
            | DamaError::NonFinite { .. }
            | DamaError::EmptyScores { .. }
            | DamaError::MissingRecord { .. }
            | DamaError::InvalidConfig(_)
            | DamaError::ContextOutOfRange { .. }
            | DamaError::TokenOutOfRange { .. }
            | DamaError::EmptyTokens
            | DamaError::Json { .. } => 1,
            DamaError::LengthMismatch { .. }
            | DamaError::EmptyMask
            | DamaError::NonPositiveAlpha { .. }
            | DamaError::ShapeMismatch { .. }
            | DamaError::NonFiniteLoss { .. } => 2,
        }
    }
}
