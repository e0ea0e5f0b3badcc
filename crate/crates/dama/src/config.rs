//! Training run configuration: a TOML file with `[data]`, `[train]`, and
//! `[output]` sections, plus `section.key=value` overrides from the command
//! line.
//!
//! Overrides are applied to the parsed document *before* deserialization,
//! so they go through exactly the same strict checks as the file itself —
//! an unknown key is rejected whether it comes from the file or a flag.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{DamaError, DamaResult};
use crate::trainer::TrainConfig;

/// Input files for a training run. Paths are resolved relative to the
/// process working directory, not the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub corpus: PathBuf,
    /// Fixed vocabulary; omitted means the vocabulary is built from the
    /// corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    /// Offline hardness annotations; required by the data-aware modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardness_records: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory receiving vocab.json, checkpoint.json, metrics.csv, and
    /// run_manifest.json. Created if missing.
    pub dir: PathBuf,
}

/// The whole config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub output: OutputSection,
}

impl RunConfigFile {
    /// The resolved configuration rendered back as TOML, for echoing at the
    /// start of a run.
    pub fn to_toml_string(&self) -> DamaResult<String> {
        toml::to_string(self)
            .map_err(|e| DamaError::InvalidConfig(format!("serializing resolved config: {e}")))
    }
}

/// Parses the right-hand side of an override as a TOML scalar; anything
/// that is not valid TOML (a bare path, an enum name) falls back to a
/// string, which matches how such values look in the file.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `section.key=value` override to a parsed TOML document.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> DamaResult<()> {
    let (key_path, raw_value) = spec.split_once('=').ok_or_else(|| {
        DamaError::InvalidConfig(format!(
            "override {spec:?} must have the form section.key=value"
        ))
    })?;
    let segments: Vec<&str> = key_path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(DamaError::InvalidConfig(format!(
            "override key {key_path:?} has an empty path segment"
        )));
    }
    let mut node = doc;
    for segment in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            DamaError::InvalidConfig(format!(
                "override {key_path:?} descends into non-table value at {segment:?}"
            ))
        })?;
        node = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node.as_table_mut().ok_or_else(|| {
        DamaError::InvalidConfig(format!(
            "override {key_path:?} descends into a non-table value"
        ))
    })?;
    table.insert(
        segments[segments.len() - 1].to_string(),
        parse_override_value(raw_value),
    );
    Ok(())
}

/// Parses config text plus overrides into a validated [`RunConfigFile`].
pub fn resolve_run_config(text: &str, overrides: &[String]) -> DamaResult<RunConfigFile> {
    let mut doc: toml::Value = text
        .parse()
        .map_err(|e| DamaError::InvalidConfig(format!("config parse error: {e}")))?;
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    let file: RunConfigFile = doc
        .try_into()
        .map_err(|e| DamaError::InvalidConfig(format!("config: {e}")))?;
    file.train.validate()?;
    Ok(file)
}

/// Reads and resolves a config file from disk.
pub fn load_run_config(path: &Path, overrides: &[String]) -> DamaResult<RunConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|source| DamaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    resolve_run_config(&text, overrides)
        .map_err(|e| DamaError::InvalidConfig(format!("{}: {e}", path.display())))
}
