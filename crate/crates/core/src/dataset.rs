//! JSONL dataset records and validating ingest.
//!
//! One record per line: a SMILES string, optional IUPAC name and free-text
//! description, and a map of task labels (null marks a missing label).
//! Ingest validates every line, collects per-line errors instead of
//! aborting, and deduplicates identical (smiles, labels) pairs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::{parse_smiles, MolGraph};

#[derive(Error, Debug)]
pub enum DatasetError {
    #[error("io error reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub smiles: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iupac: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub labels: BTreeMap<String, Option<f64>>,
}

impl DatasetRecord {
    pub fn label(&self, task: &str) -> Option<f64> {
        self.labels.get(task).copied().flatten()
    }

    pub fn parse(&self) -> Result<MolGraph, crate::molgraph::ParseError> {
        parse_smiles(&self.smiles)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<LineIssue>,
    pub duplicates: usize,
}

fn validate_line(line: &str) -> Result<DatasetRecord, String> {
    let record: DatasetRecord =
        serde_json::from_str(line).map_err(|e| format!("invalid record: {e}"))?;
    if let Err(e) = parse_smiles(&record.smiles) {
        return Err(format!("smiles rejected: {e}"));
    }
    for (task, value) in &record.labels {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(format!("label `{task}` is not finite"));
            }
        }
    }
    Ok(record)
}

/// Parses and validates a JSONL dataset. In strict mode the first bad line
/// aborts; otherwise bad lines are reported and skipped. Records with
/// identical smiles and labels collapse to the first occurrence.
pub fn ingest_lines(
    lines: impl Iterator<Item = String>,
    strict: bool,
) -> Result<(Vec<DatasetRecord>, IngestReport), DatasetError> {
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match validate_line(&line) {
            Ok(record) => {
                let key = format!(
                    "{}|{}",
                    record.smiles,
                    serde_json::to_string(&record.labels).expect("labels serialize")
                );
                if seen.insert(key, ()).is_some() {
                    report.duplicates += 1;
                } else {
                    records.push(record);
                    report.accepted += 1;
                }
            }
            Err(message) => {
                if strict {
                    return Err(DatasetError::Line {
                        line: line_no,
                        message,
                    });
                }
                report.rejected.push(LineIssue {
                    line: line_no,
                    message,
                });
            }
        }
    }
    Ok((records, report))
}

pub fn ingest(path: &Path, strict: bool) -> Result<(Vec<DatasetRecord>, IngestReport), DatasetError> {
    let text = std::fs::read_to_string(path)?;
    ingest_lines(text.lines().map(|l| l.to_string()), strict)
}

/// All non-empty description lines, the text side of the corpus.
pub fn description_corpus(records: &[DatasetRecord]) -> Vec<String> {
    records
        .iter()
        .filter_map(|r| r.description.clone())
        .filter(|d| !d.trim().is_empty())
        .collect()
}

/// Every text field in the dataset, for vocabulary building.
pub fn full_text_corpus(records: &[DatasetRecord]) -> Vec<String> {
    let mut out = Vec::new();
    for r in records {
        if let Some(d) = &r.description {
            out.push(d.clone());
        }
        if let Some(i) = &r.iupac {
            out.push(i.clone());
        }
    }
    out
}
