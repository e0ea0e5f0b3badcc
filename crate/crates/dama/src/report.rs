//! Run artifacts: the per-batch metrics CSV, the evaluation JSON, input
//! digests for the run manifest, and the long-format comparison table.
//!
//! Files written here are byte-deterministic: floats use Rust's shortest
//! round-trip `Display` form and nothing embeds a timestamp, so re-running
//! the same configuration reproduces identical bytes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{DamaError, DamaResult};
use crate::trainer::{BatchReport, EvalReport, TrainConfig};

/// Column order of the metrics CSV.
pub const METRICS_HEADER: &str =
    "epoch,batch,loss,alpha_m,mean_beta_c,running_mean,retained_count,mean_raw_gap";

/// Column order of the comparison CSV.
pub const COMPARISON_HEADER: &str = "run_label,epoch,batch,metric,value";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DamaError + '_ {
    move |source| DamaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl Fn(serde_json::Error) -> DamaError + '_ {
    move |source| DamaError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one CSV line per optimizer step.
pub fn write_metrics_csv(path: &Path, reports: &[BatchReport]) -> DamaResult<()> {
    let mut out = String::with_capacity(64 * (reports.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            r.batch,
            r.loss,
            r.alpha_m,
            r.mean_beta_c,
            r.running_mean,
            r.retained_count,
            r.mean_raw_gap
        )
        .expect("writing to a String cannot fail");
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Reads a metrics CSV back, enforcing the exact header and field count.
/// Shortest round-trip float formatting makes this lossless.
pub fn read_metrics_csv(path: &Path) -> DamaResult<Vec<BatchReport>> {
    let body = std::fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, detail: String| DamaError::MalformedRecord {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, header)) if header == METRICS_HEADER => {}
        Some((line, header)) => {
            return Err(malformed(line, format!("unexpected header {header:?}")))
        }
        None => return Err(malformed(1, "missing header".to_string())),
    }
    let mut reports = Vec::new();
    for (line, text) in lines {
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 8 {
            return Err(malformed(
                line,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let int = |i: usize| -> DamaResult<usize> {
            fields[i]
                .parse()
                .map_err(|e| malformed(line, format!("field {}: {e}", i + 1)))
        };
        let float = |i: usize| -> DamaResult<f64> {
            fields[i]
                .parse()
                .map_err(|e| malformed(line, format!("field {}: {e}", i + 1)))
        };
        reports.push(BatchReport {
            epoch: int(0)?,
            batch: int(1)?,
            loss: float(2)?,
            alpha_m: float(3)?,
            mean_beta_c: float(4)?,
            running_mean: float(5)?,
            retained_count: int(6)?,
            mean_raw_gap: float(7)?,
        });
    }
    Ok(reports)
}

pub fn write_eval_json(path: &Path, report: &EvalReport) -> DamaResult<()> {
    let body = serde_json::to_string_pretty(report).map_err(json_err(path))?;
    std::fs::write(path, body + "\n").map_err(io_err(path))
}

pub fn read_eval_json(path: &Path) -> DamaResult<EvalReport> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(json_err(path))
}

/// A file path together with the SHA-256 of its contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
    }
    hex
}

/// Digest of a file's current contents, recorded under the path it was
/// given (not canonicalized, so manifests stay stable across machines).
pub fn file_digest(path: &Path) -> DamaResult<FileDigest> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(FileDigest {
        path: path.to_string_lossy().into_owned(),
        sha256: sha256_hex(&bytes),
    })
}

/// Everything needed to reproduce a training run: the resolved config and
/// a digest of every input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub inputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> DamaResult<()> {
        let body = serde_json::to_string_pretty(self).map_err(json_err(path))?;
        std::fs::write(path, body + "\n").map_err(io_err(path))
    }

    pub fn load(path: &Path) -> DamaResult<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(json_err(path))
    }
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const METRIC_COLUMNS: [&str; 6] = [
    "loss",
    "alpha_m",
    "mean_beta_c",
    "running_mean",
    "retained_count",
    "mean_raw_gap",
];

/// Flattens labelled runs into one long-format table
/// (`run_label,epoch,batch,metric,value`), one row per metric value.
/// Evaluation rows have no epoch/batch, so those columns stay empty.
pub fn comparison_csv(
    metrics_runs: &[(String, Vec<BatchReport>)],
    eval_runs: &[(String, EvalReport)],
) -> String {
    let mut out = String::new();
    out.push_str(COMPARISON_HEADER);
    out.push('\n');
    for (label, reports) in metrics_runs {
        let label = csv_field(label);
        for r in reports {
            let values = [
                r.loss,
                r.alpha_m,
                r.mean_beta_c,
                r.running_mean,
                r.retained_count as f64,
                r.mean_raw_gap,
            ];
            for (metric, value) in METRIC_COLUMNS.iter().zip(values) {
                writeln!(out, "{label},{},{},{metric},{value}", r.epoch, r.batch)
                    .expect("writing to a String cannot fail");
            }
        }
    }
    for (label, eval) in eval_runs {
        let label = csv_field(label);
        let rows = [
            ("preference_accuracy", eval.preference_accuracy),
            ("mean_gap_easy", eval.mean_gap_easy),
            ("mean_gap_hard", eval.mean_gap_hard),
            ("bucket_threshold", eval.bucket_threshold),
            ("easy_count", eval.easy_count as f64),
            ("hard_count", eval.hard_count as f64),
        ];
        for (metric, value) in rows {
            writeln!(out, "{label},,,{metric},{value}")
                .expect("writing to a String cannot fail");
        }
    }
    out
}

pub fn write_comparison_csv(
    path: &Path,
    metrics_runs: &[(String, Vec<BatchReport>)],
    eval_runs: &[(String, EvalReport)],
) -> DamaResult<()> {
    std::fs::write(path, comparison_csv(metrics_runs, eval_runs)).map_err(io_err(path))
}
