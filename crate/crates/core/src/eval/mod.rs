//! Metrics, run records, multi-seed aggregation, embedding export,
//! efficiency profiling and reports.

mod export;
mod profile;
mod report;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use export::export_embeddings;
pub use profile::{profile, Profile, ProfileMode, PROFILE_WARMUP};
pub use report::{load_results, RESULT_FILE, render_markdown, render_svg, write_report, write_rollup_csv};

use crate::backbones::Family;
use crate::error::{Error, Result};
use crate::pretrain::Method;
use crate::splits::Scenario;
use crate::trainer::History;

/// Confusion matrix `[true][predicted]`.
pub fn confusion(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::InvalidArgument(format!("class id {} outside 0..{n_classes}", p.max(l))));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1 over the classes present in `labels`.
/// A class without true positives scores 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    let m = confusion(preds, labels, n_classes)?;
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for &c in &present {
        let tp = m[c][c] as f64;
        let fn_ = m[c].iter().sum::<usize>() as f64 - tp;
        let fp = (0..n_classes).map(|r| m[r][c]).sum::<usize>() as f64 - tp;
        total += 2.0 * tp / (2.0 * tp + fp + fn_);
    }
    Ok(total / present.len() as f64)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Outcome of one fine-tuning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub fold_id: String,
    pub leftout_dataset: String,
    pub method: Method,
    pub family: Family,
    pub scenario: Scenario,
    pub frozen: bool,
    pub seed: u64,
    pub test_macro_f1: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub history: History,
    pub step_ms_median: f64,
    /// Global class ids of the target dataset, in head order.
    pub classes: Vec<u8>,
    pub train_window_ids: Vec<String>,
    /// Times the test partition was read.
    pub test_evaluations: usize,
    pub encoder_digest_before: String,
    pub encoder_digest_after: String,
    /// Effective hyperparameters of the pretraining and fine-tuning stages.
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

/// The axes that identify a table cell.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub fold_id: String,
    pub method: Method,
    pub family: Family,
    pub scenario: Scenario,
    pub frozen: bool,
}

impl RunResult {
    pub fn cell(&self) -> CellKey {
        CellKey {
            fold_id: self.fold_id.clone(),
            method: self.method,
            family: self.family,
            scenario: self.scenario,
            frozen: self.frozen,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
}

impl CellSummary {
    /// Percent with two decimals, e.g. `80.90 ± 10.88`.
    pub fn render(&self) -> String {
        format_cell(self.mean, self.std)
    }
}

pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of the test macro F1 of one cell.
pub fn aggregate_runs(results: &[RunResult]) -> Result<CellSummary> {
    if results.len() < 2 {
        return Err(Error::InvalidArgument(format!("aggregation needs at least 2 runs, got {}", results.len())));
    }
    let key = results[0].cell();
    if let Some(other) = results.iter().find(|r| r.cell() != key) {
        return Err(Error::MixedCells(format!("{key:?} vs {:?}", other.cell())));
    }
    let scores: Vec<f64> = results.iter().map(|r| r.test_macro_f1).collect();
    let (mean, std) = mean_std(&scores);
    Ok(CellSummary { key, n: results.len(), mean, std })
}
