//! Confusion matrix and per-class precision/recall/F reporting.

use serde::{Deserialize, Serialize};

use super::{CellType, NUM_CLASSES};
use crate::error::{CoreError, Result};

/// 5x5 count matrix; rows are true classes, columns predicted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[(CellType, CellType)]) -> Self {
        let mut cm = Self::new();
        for &(truth, pred) in pairs {
            cm.add(truth, pred);
        }
        cm
    }

    pub fn add(&mut self, truth: CellType, pred: CellType) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn count(&self, truth: CellType, pred: CellType) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class true count (row sum).
    pub fn support(&self, class: CellType) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum();
        trace as f64 / total as f64
    }
}

/// Precision, recall, and F measure for one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: CellType,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub support: u64,
}

/// Per-class metrics plus support-weighted averages. `zero_division` flags
/// that some denominator was zero and the affected metric was reported as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f_measure: f64,
    pub accuracy: Option<f64>,
    pub zero_division: bool,
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Report computed from a confusion matrix. Zero denominators (a class never
/// predicted, or with no support) yield 0 and set the `zero_division` flag.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    if cm.total() == 0 {
        return Err(CoreError::Config("empty confusion matrix".into()));
    }
    let mut zero_division = false;
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for class in CellType::ALL {
        let i = class.index();
        let tp = cm.counts[i][i];
        let support = cm.support(class);
        let predicted: u64 = (0..NUM_CLASSES).map(|r| cm.counts[r][i]).sum();
        let precision = if predicted == 0 {
            zero_division = true;
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            zero_division = true;
            0.0
        } else {
            tp as f64 / support as f64
        };
        per_class.push(ClassMetrics {
            class,
            precision,
            recall,
            f_measure: f_measure(precision, recall),
            support,
        });
    }
    let mut report = weighted_from(per_class, zero_division);
    report.accuracy = Some(cm.accuracy());
    Ok(report)
}

/// Report assembled from externally supplied per-class precision/recall and
/// support, in fixed class order. Used to reproduce published tables whose
/// rounded entries cannot come from an integer confusion matrix.
pub fn report_from_precision_recall(
    precision_recall: &[(f64, f64); NUM_CLASSES],
    support: &[u64; NUM_CLASSES],
) -> ClassReport {
    let per_class = CellType::ALL
        .iter()
        .zip(precision_recall.iter().zip(support))
        .map(|(&class, (&(p, r), &s))| ClassMetrics {
            class,
            precision: p,
            recall: r,
            f_measure: f_measure(p, r),
            support: s,
        })
        .collect();
    weighted_from(per_class, false)
}

fn weighted_from(per_class: Vec<ClassMetrics>, zero_division: bool) -> ClassReport {
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    let weight = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    ClassReport {
        weighted_precision: weight(|m| m.precision),
        weighted_recall: weight(|m| m.recall),
        weighted_f_measure: weight(|m| m.f_measure),
        accuracy: None,
        zero_division,
        per_class,
    }
}

impl std::fmt::Display for ClassReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f", "support")?;
        for m in &self.per_class {
            writeln!(
                f,
                "{:<10} {:>9.3} {:>9.3} {:>9.3} {:>8}",
                m.class.name(),
                m.precision,
                m.recall,
                m.f_measure,
                m.support
            )?;
        }
        writeln!(
            f,
            "{:<10} {:>9.3} {:>9.3} {:>9.3} {:>8}",
            "weighted",
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f_measure,
            self.per_class.iter().map(|m| m.support).sum::<u64>()
        )?;
        if let Some(acc) = self.accuracy {
            writeln!(f, "accuracy   {acc:>9.3}")?;
        }
        Ok(())
    }
}
