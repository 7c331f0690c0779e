use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ClassMetrics, MetricsReport};
use crate::train::{HistoryRow, SearchEntry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: String,
    pub records: usize,
    pub labels: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl From<&MetricsReport> for MetricsSummary {
    fn from(r: &MetricsReport) -> Self {
        MetricsSummary {
            accuracy: r.accuracy,
            macro_precision: r.macro_precision,
            macro_recall: r.macro_recall,
            macro_f1: r.macro_f1,
            per_class: r.per_class.clone(),
        }
    }
}

/// Machine-readable result of a `train`, `evaluate` or `ablate` run.
///
/// `partition` names the split that `confusion` and `metrics` describe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub dataset: DatasetInfo,
    pub split_sizes: SplitSizes,
    pub best_n: usize,
    pub variant: String,
    pub partition: String,
    pub history: Vec<HistoryRow>,
    pub search: Vec<SearchEntry>,
    pub confusion: Vec<Vec<u64>>,
    pub metrics: MetricsSummary,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
