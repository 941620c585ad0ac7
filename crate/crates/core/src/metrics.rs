//! Confusion-matrix evaluation: accuracy, per-class precision/recall/F1,
//! and macro-F1.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<usize>, // row = gold, column = predicted
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: alloc::vec![0; num_classes * num_classes] }
    }

    pub fn record(&mut self, gold: usize, predicted: usize) -> Result<()> {
        if gold >= self.num_classes {
            return Err(Error::LabelOutOfRange { label: gold, num_classes: self.num_classes });
        }
        if predicted >= self.num_classes {
            return Err(Error::LabelOutOfRange { label: predicted, num_classes: self.num_classes });
        }
        self.counts[gold * self.num_classes + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, gold: usize, predicted: usize) -> usize {
        self.counts[gold * self.num_classes + predicted]
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.num_classes).map(|c| self.count(c, c)).sum();
        correct as f64 / self.total() as f64
    }

    fn class_metrics(&self, class: usize) -> ClassReport {
        let tp = self.count(class, class);
        let predicted: usize = (0..self.num_classes).map(|g| self.count(g, class)).sum();
        let gold: usize = (0..self.num_classes).map(|p| self.count(class, p)).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassReport { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation summary computed from a full confusion matrix. Macro-F1 is
/// the unweighted mean of per-class F1; a class with neither gold examples
/// nor predictions contributes 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassReport>,
    pub n_examples: usize,
}

impl EvalReport {
    pub fn from_confusion(matrix: &ConfusionMatrix) -> Result<Self> {
        if matrix.total() == 0 {
            return Err(Error::EmptyDataset);
        }
        let per_class: Vec<ClassReport> =
            (0..matrix.num_classes).map(|c| matrix.class_metrics(c)).collect();
        let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
        Ok(Self { accuracy: matrix.accuracy(), macro_f1, per_class, n_examples: matrix.total() })
    }
}

/// Convenience wrapper over gold/predicted label slices.
pub fn evaluate_predictions(gold: &[usize], predicted: &[usize], num_classes: usize) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::ClassCountMismatch { left: gold.len(), right: predicted.len() });
    }
    let mut matrix = ConfusionMatrix::new(num_classes);
    for (&g, &p) in gold.iter().zip(predicted) {
        matrix.record(g, p)?;
    }
    EvalReport::from_confusion(&matrix)
}
