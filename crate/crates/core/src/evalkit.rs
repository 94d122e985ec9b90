//! Metrics and the split protocol: seeded dataset splitting, pair-counting
//! ROC-AUC, MAE, and forward-only evaluation runs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SplitRatios;
use crate::dataset::DatasetRecord;
use crate::pipeline::{PipelineError, Stage2Model, TaskKind};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("dataset of {0} records is too small to split (minimum 10)")]
    TooSmall(usize),
    #[error("both classes are required for ROC-AUC")]
    SingleClass,
    #[error("prediction and target lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no requested task has labels in this split")]
    EmptyTaskIntersection,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitSpec {
    pub ratios: SplitRatios,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle then contiguous partition. Disjoint and covering by
/// construction; identical for identical (len, spec).
pub fn split_dataset(len: usize, spec: &SplitSpec) -> Result<Split, EvalError> {
    if len < 10 {
        return Err(EvalError::TooSmall(len));
    }
    let mut indices: Vec<usize> = (0..len).collect();
    let mut rng = crate::rng(spec.seed);
    indices.shuffle(&mut rng);
    let n_train = (spec.ratios.train * len as f64).floor() as usize;
    let n_valid = (spec.ratios.valid * len as f64).floor() as usize;
    let train = indices[..n_train].to_vec();
    let valid = indices[n_train..n_train + n_valid].to_vec();
    let test = indices[n_train + n_valid..].to_vec();
    Ok(Split {
        train,
        valid,
        test,
    })
}

/// ROC-AUC by exhaustive pair counting: the probability that a positive
/// outscores a negative, ties counted half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(s, _)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::SingleClass);
    }
    let mut favorable = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                favorable += 1.0;
            } else if p == n {
                favorable += 0.5;
            }
        }
    }
    Ok(favorable / (pos.len() * neg.len()) as f64)
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::LengthMismatch(0, 0));
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    /// task name -> (metric name, value)
    pub metrics: BTreeMap<String, TaskMetric>,
    pub examples: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskMetric {
    pub metric: String,
    pub value: f64,
    pub count: usize,
}

/// Forward-only evaluation of a trained model over one split. Each task
/// gets ROC-AUC (classification) or MAE (regression) over the examples
/// that carry a label for it.
pub fn evaluate(
    model: &Stage2Model,
    records: &[DatasetRecord],
    indices: &[usize],
    tasks: &[String],
    config_hash: &str,
) -> Result<MetricsReport, EvalError> {
    let mut metrics = BTreeMap::new();
    let mut total = 0usize;
    for task in tasks {
        let Some(head_kind) = model.task_kind(task) else {
            continue;
        };
        let mut scores = Vec::new();
        let mut targets = Vec::new();
        for &i in indices {
            let record = &records[i];
            let Some(label) = record.label(task) else {
                continue;
            };
            let score = model.predict_score(record, task)?;
            scores.push(score);
            targets.push(label);
        }
        if scores.is_empty() {
            continue;
        }
        total += scores.len();
        let (metric, value) = match head_kind {
            TaskKind::Classification(_) => {
                let labels: Vec<u8> = targets.iter().map(|&t| (t > 0.5) as u8).collect();
                ("roc_auc".to_string(), roc_auc(&scores, &labels)?)
            }
            TaskKind::Regression => ("mae".to_string(), mae(&scores, &targets)?),
        };
        metrics.insert(
            task.clone(),
            TaskMetric {
                metric,
                value,
                count: scores.len(),
            },
        );
    }
    if metrics.is_empty() {
        return Err(EvalError::EmptyTaskIntersection);
    }
    Ok(MetricsReport {
        metrics,
        examples: total,
        config_hash: config_hash.to_string(),
    })
}
