//! Confusion matrix and per-class classification statistics: one-vs-all
//! accuracy, recall, precision, and F1, plus overall accuracy.
//!
//! Statistics with a zero denominator are reported as `None` rather than
//! NaN; report writers render them as "—" (human) or null (machine).

use crate::error::{Error, Result};

/// Square count grid: rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Input(format!(
                "class index out of range: truth {truth}, predicted {predicted}, classes {}",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.count(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, predicted)).sum()
    }
}

/// Builds a confusion matrix from parallel label/prediction slices.
pub fn confusion(labels: &[usize], predictions: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::Input(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in labels.iter().zip(predictions) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Statistics for one class; `None` marks a zero-denominator cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassStats {
    /// (TP + TN) / total for this class against all others.
    pub accuracy_onevall: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

/// Per-class statistics plus the overall accuracy `trace / total`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsBundle {
    pub per_class: Vec<ClassStats>,
    pub overall_accuracy: Option<f64>,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Derives all per-class statistics from a confusion matrix.
pub fn per_class_stats(cm: &ConfusionMatrix) -> MetricsBundle {
    let total = cm.total();
    let per_class = (0..cm.classes())
        .map(|c| {
            let tp = cm.count(c, c);
            let fn_ = cm.row_sum(c) - tp;
            let fp = cm.col_sum(c) - tp;
            let tn = total - tp - fn_ - fp;
            let recall = ratio(tp, tp + fn_);
            let precision = ratio(tp, tp + fp);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            };
            ClassStats {
                accuracy_onevall: ratio(tp + tn, total),
                recall,
                precision,
                f1,
            }
        })
        .collect();
    MetricsBundle {
        per_class,
        overall_accuracy: ratio(cm.trace(), total),
        total,
    }
}
