//! Confusion matrices and macro-averaged classification metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix; `counts[actual][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 {
            return Err(Error::Invalid("confusion matrix has no classes".into()));
        }
        if let Some((r, row)) = counts.iter().enumerate().find(|(_, row)| row.len() != k) {
            return Err(Error::shape(
                "confusion",
                format!("row {r} has {} entries, expected {k}", row.len()),
            ));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn zeros(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// Relabels class `c` as `perm[c]` on both axes.
    pub fn permuted(&self, perm: &[usize]) -> ConfusionMatrix {
        let k = self.num_classes();
        let mut counts = vec![vec![0; k]; k];
        for a in 0..k {
            for p in 0..k {
                counts[perm[a]][perm[p]] = self.counts[a][p];
            }
        }
        ConfusionMatrix { counts }
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} actual labels, {} predictions", actual.len(), predicted.len()),
        ));
    }
    let mut m = ConfusionMatrix::zeros(num_classes);
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= num_classes || p >= num_classes {
            return Err(Error::Invalid(format!(
                "label pair ({a}, {p}) outside {num_classes} classes"
            )));
        }
        m.counts[a][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No predictions of this class, so precision was set to 0.
    pub empty_prediction: bool,
    /// No samples of this class, so recall was set to 0.
    pub empty_support: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(matrix: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Invalid("confusion matrix is empty".into()));
    }
    let k = matrix.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = matrix.get(c, c);
            let (precision, empty_prediction) = ratio(tp, matrix.col_sum(c));
            let (recall, empty_support) = ratio(tp, matrix.row_sum(c));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                empty_prediction,
                empty_support,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(MetricsReport {
        accuracy: matrix.trace() as f64 / total as f64,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        matrix: matrix.clone(),
    })
}

impl MetricsReport {
    /// `key: value` lines, values to four decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy: {:.4}", self.accuracy);
        let _ = writeln!(s, "macro_precision: {:.4}", self.macro_precision);
        let _ = writeln!(s, "macro_recall: {:.4}", self.macro_recall);
        let _ = writeln!(s, "macro_f1: {:.4}", self.macro_f1);
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(s, "class_{c}_precision: {:.4}", m.precision);
            let _ = writeln!(s, "class_{c}_recall: {:.4}", m.recall);
            let _ = writeln!(s, "class_{c}_f1: {:.4}", m.f1);
            if m.empty_prediction || m.empty_support {
                let _ = writeln!(
                    s,
                    "class_{c}_flag: {}",
                    if m.empty_prediction { "no_predictions" } else { "no_support" }
                );
            }
        }
        s
    }

    pub fn has_empty_classes(&self) -> bool {
        self.per_class.iter().any(|c| c.empty_prediction || c.empty_support)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_orientation() {
        let m = confusion(&[0, 1], &[1, 0], 2).unwrap();
        assert_eq!(m.counts(), &[vec![0, 1], vec![1, 0]]);
        let m = confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(m.get(1, 0), 1);
        assert!(confusion(&[0], &[2], 2).is_err());
        assert!(confusion(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let m = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let r = metrics(&m).unwrap();
        assert_eq!((r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_predictor_flags_empty_column() {
        let m = confusion(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        let r = metrics(&m).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(r.per_class[1].empty_prediction);
        assert!(r.has_empty_classes());
        assert!(r.to_text().contains("class_1_flag: no_predictions"));
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(metrics(&ConfusionMatrix::zeros(2)).is_err());
        assert!(ConfusionMatrix::new(vec![vec![1, 2]]).is_err());
    }

    #[test]
    fn text_format() {
        let m = ConfusionMatrix::new(vec![vec![415, 3], vec![5, 203]]).unwrap();
        let text = metrics(&m).unwrap().to_text();
        assert!(text.starts_with("accuracy: 0.9872\n"));
    }
}
