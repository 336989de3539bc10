//! Cross-dataset evaluation protocol: train on every subject of the source
//! dataset, test on one subject of the target dataset, iterating over target
//! subjects. Class subsets of both datasets are aligned onto a canonical
//! label set; target labels are withheld from the training pool.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledTrial, TargetPool};
use crate::error::{Error, Result};

/// Maps one emotion class across datasets onto a canonical name. The position
/// in [`ProtocolSpec::classes`] defines the canonical label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAlignment {
    pub canonical: String,
    pub source_name: String,
    pub target_name: String,
}

impl ClassAlignment {
    pub fn same(name: &str) -> Self {
        ClassAlignment {
            canonical: name.to_string(),
            source_name: name.to_string(),
            target_name: name.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub classes: Vec<ClassAlignment>,
}

impl ProtocolSpec {
    /// Canonical 3-class subset: neutral = 0, sad = 1, happy = 2.
    pub fn three_class() -> Self {
        ProtocolSpec {
            classes: ["neutral", "sad", "happy"]
                .iter()
                .map(|n| ClassAlignment::same(n))
                .collect(),
        }
    }

    /// 4-class subset adding fear = 3.
    pub fn four_class() -> Self {
        ProtocolSpec {
            classes: ["neutral", "sad", "happy", "fear"]
                .iter()
                .map(|n| ClassAlignment::same(n))
                .collect(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn canonical_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.canonical.clone()).collect()
    }
}

/// One evaluation fold: the full class-filtered source set for training, one
/// target subject's labeled trials for scoring, and the same trials with
/// labels withheld as the style pool.
#[derive(Clone, Debug)]
pub struct Fold {
    pub target_subject: u32,
    pub train_source: Vec<LabeledTrial>,
    pub test_target: Vec<LabeledTrial>,
    pub unlabeled_target: TargetPool,
}

fn class_positions(
    spec: &ProtocolSpec,
    class_names: &[String],
    pick: impl Fn(&ClassAlignment) -> &str,
    dataset: &str,
) -> Result<Vec<(u16, u16)>> {
    spec.classes
        .iter()
        .enumerate()
        .map(|(canonical, alignment)| {
            let name = pick(alignment);
            let original = class_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    Error::Protocol(format!("class `{name}` not present in dataset `{dataset}`"))
                })?;
            Ok((original as u16, canonical as u16))
        })
        .collect()
}

fn filter_relabel(trials: &[LabeledTrial], mapping: &[(u16, u16)]) -> Vec<LabeledTrial> {
    trials
        .iter()
        .filter_map(|t| {
            mapping
                .iter()
                .find(|(orig, _)| *orig == t.label)
                .map(|(_, canonical)| LabeledTrial {
                    features: t.features.clone(),
                    label: *canonical,
                    subject: t.subject,
                })
        })
        .collect()
}

/// One fold per target subject; the training set is the same class-filtered
/// source set in every fold.
pub fn build_protocol(spec: &ProtocolSpec, source: &Dataset, target: &Dataset) -> Result<Vec<Fold>> {
    if source.manifest.channel_count() != target.manifest.channel_count()
        || source.manifest.band_count() != target.manifest.band_count()
    {
        return Err(Error::Protocol(format!(
            "dataset shapes differ: ({}, {}) vs ({}, {})",
            source.manifest.channel_count(),
            source.manifest.band_count(),
            target.manifest.channel_count(),
            target.manifest.band_count()
        )));
    }
    let src_map = class_positions(spec, &source.manifest.class_names, |a| &a.source_name, &source.manifest.name)?;
    let tgt_map = class_positions(spec, &target.manifest.class_names, |a| &a.target_name, &target.manifest.name)?;

    let train_source = filter_relabel(&source.trials, &src_map);
    if train_source.is_empty() {
        return Err(Error::Protocol("no source trials left after class filtering".into()));
    }

    let mut folds = Vec::new();
    for &subject in &target.manifest.subject_ids {
        let subject_trials: Vec<LabeledTrial> = target
            .trials
            .iter()
            .filter(|t| t.subject == subject)
            .cloned()
            .collect();
        let test_target = filter_relabel(&subject_trials, &tgt_map);
        if test_target.is_empty() {
            return Err(Error::Protocol(format!(
                "target subject {subject} has no trials in the selected classes"
            )));
        }
        let unlabeled_target = TargetPool::from_trials(&test_target);
        folds.push(Fold {
            target_subject: subject,
            train_source: train_source.clone(),
            test_target,
            unlabeled_target,
        });
    }
    if folds.is_empty() {
        return Err(Error::Protocol("target dataset has no subjects".into()));
    }
    Ok(folds)
}
