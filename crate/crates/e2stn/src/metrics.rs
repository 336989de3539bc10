//! Fold evaluation, confusion matrices, and accuracy aggregation.

use serde::{Deserialize, Serialize};

use crate::classifier::{predict, ClassifierHandles};
use crate::data::protocol::Fold;
use crate::error::{Error, Result};
use crate::params::Bindings;
use crate::tensor::Graph;
use crate::training::Model;

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.classes + predicted] += 1;
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|i| self.count(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return f64::NAN;
        }
        self.correct() as f64 / total as f64
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|r| (0..self.classes).map(|c| self.count(r, c)).sum())
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.classes)
            .map(|r| (0..self.classes).map(|c| self.count(r, c)).collect())
            .collect()
    }

    /// Per-row percentages; rows with no samples come back as zeros.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        let sums = self.row_sums();
        (0..self.classes)
            .map(|r| {
                (0..self.classes)
                    .map(|c| {
                        if sums[r] == 0 {
                            0.0
                        } else {
                            self.count(r, c) as f64 / sums[r] as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn merged(folds: &[&ConfusionMatrix]) -> Result<ConfusionMatrix> {
        let first = folds
            .first()
            .ok_or_else(|| Error::Validation("no confusion matrices to merge".into()))?;
        let mut out = ConfusionMatrix::new(first.classes);
        for m in folds {
            if m.classes != out.classes {
                return Err(Error::Validation("confusion matrix sizes differ".into()));
            }
            for (o, c) in out.counts.iter_mut().zip(&m.counts) {
                *o += c;
            }
        }
        Ok(out)
    }
}

/// Evaluation result of one protocol fold.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldResult {
    pub target_subject: u32,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Classify every target trial of a fold. Target labels are read here,
/// read-only, for scoring.
pub fn evaluate_fold(model: &Model, fold: &Fold) -> Result<FoldResult> {
    let dims = model.dims;
    let mut confusion = ConfusionMatrix::new(dims.classes);
    for trial in &fold.test_target {
        if trial.features.channels() != dims.channels || trial.features.bands() != dims.bands {
            return Err(Error::Dimension {
                op: "evaluate_fold",
                shape: vec![trial.features.channels(), trial.features.bands()],
                msg: format!(
                    "trial shape does not match checkpoint dims ({}, {})",
                    dims.channels, dims.bands
                ),
            });
        }
        if trial.label as usize >= dims.classes {
            return Err(Error::Validation(format!(
                "test label {} out of range for {} classes",
                trial.label, dims.classes
            )));
        }
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let h = ClassifierHandles::bind(&mut g, &mut b, &model.store, &model.cfg.model)?;
        let x = trial.features.to_tensor(&mut g)?;
        let probs = predict(&mut g, x, &h, &model.cfg.model)?;
        let predicted = g
            .data(probs)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        confusion.record(trial.label as usize, predicted);
    }
    Ok(FoldResult {
        target_subject: fold.target_subject,
        accuracy: confusion.accuracy(),
        confusion,
    })
}

/// Graph feature maps of a trial set, for the contribution export.
pub fn graph_feature_maps(
    model: &Model,
    trials: &[crate::data::LabeledTrial],
) -> Result<Vec<crate::array::Array>> {
    use crate::classifier::advanced_features;
    trials
        .iter()
        .map(|trial| {
            let mut g = Graph::new();
            let mut b = Bindings::new();
            let h = ClassifierHandles::bind(&mut g, &mut b, &model.store, &model.cfg.model)?;
            let x = trial.features.to_tensor(&mut g)?;
            let feats = advanced_features(&mut g, x, &h, &model.cfg.model)?;
            crate::array::Array::new(g.shape(feats).to_vec(), g.data(feats).to_vec())
        })
        .collect()
}

/// Mean and population standard deviation over per-fold accuracies.
pub fn aggregate(accuracies: &[f64]) -> Result<(f64, f64)> {
    if accuracies.is_empty() {
        return Err(Error::Validation("no folds to aggregate".into()));
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Write a confusion matrix as CSV: a count block then a row-normalized
/// percentage block.
pub fn write_confusion_csv(
    path: &std::path::Path,
    confusion: &ConfusionMatrix,
    class_names: &[String],
) -> Result<()> {
    use std::io::Write;
    if class_names.len() != confusion.classes {
        return Err(Error::Validation("class name count mismatch".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "counts,{}", class_names.join(","))?;
    for (r, row) in confusion.rows().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{}", class_names[r], cells.join(","))?;
    }
    writeln!(out, "row_pct,{}", class_names.join(","))?;
    for (r, row) in confusion.row_normalized().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{:.2}", v * 100.0)).collect();
        writeln!(out, "{},{}", class_names[r], cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}
