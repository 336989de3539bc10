//! Trial data types, dataset containers, the synthetic two-domain benchmark
//! and the cross-dataset evaluation protocol.

pub mod container;
pub mod protocol;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trial's pre-decomposed EEG features: channels x frequency bands,
/// row-major with bands fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    channels: usize,
    bands: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(channels: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || bands == 0 {
            return Err(Error::Dimension {
                op: "feature_matrix",
                shape: vec![channels, bands],
                msg: "channel and band counts must be >= 1".into(),
            });
        }
        if values.len() != channels * bands {
            return Err(Error::Dimension {
                op: "feature_matrix",
                shape: vec![channels, bands],
                msg: format!("expected {} values, got {}", channels * bands, values.len()),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "feature_matrix" });
        }
        Ok(FeatureMatrix { channels, bands, values })
    }

    pub fn zeros(channels: usize, bands: usize) -> Self {
        FeatureMatrix {
            channels,
            bands,
            values: vec![0.0; channels * bands],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, channel: usize, band: usize) -> f64 {
        self.values[channel * self.bands + band]
    }

    pub fn set(&mut self, channel: usize, band: usize, v: f64) {
        self.values[channel * self.bands + band] = v;
    }

    /// Frobenius distance to another matrix of the same shape.
    pub fn frobenius_distance(&self, other: &FeatureMatrix) -> f64 {
        debug_assert_eq!((self.channels, self.bands), (other.channels, other.bands));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Insert this matrix into a graph as a constant.
    pub fn to_tensor(&self, g: &mut crate::tensor::Graph) -> Result<crate::tensor::Tensor> {
        g.constant(vec![self.channels, self.bands], self.values.clone())
    }

    /// Copy with the band axis reversed.
    pub fn reverse_bands(&self) -> FeatureMatrix {
        let mut out = self.clone();
        for c in 0..self.channels {
            for b in 0..self.bands {
                out.set(c, b, self.get(c, self.bands - 1 - b));
            }
        }
        out
    }
}

/// A trial with its emotion label and originating subject.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrial {
    pub features: FeatureMatrix,
    pub label: u16,
    pub subject: u32,
}

/// Target-domain trials with labels withheld. Training code receives this
/// type, so target labels are unreachable there by construction; only the
/// evaluation path sees the labeled test set.
#[derive(Clone, Debug)]
pub struct TargetPool {
    features: Vec<FeatureMatrix>,
}

impl TargetPool {
    pub fn from_trials(trials: &[LabeledTrial]) -> Self {
        TargetPool {
            features: trials.iter().map(|t| t.features.clone()).collect(),
        }
    }

    pub fn features(&self) -> &[FeatureMatrix] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Sidecar JSON describing a binary trial container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub channel_names: Vec<String>,
    pub band_names: Vec<String>,
    pub class_names: Vec<String>,
    pub subject_ids: Vec<u32>,
    /// subject id (decimal string) -> byte offsets of its trial records
    pub trial_index: std::collections::BTreeMap<String, Vec<u64>>,
    /// path of the binary container, relative to the manifest file
    pub data_file: String,
}

impl DatasetManifest {
    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    pub fn band_count(&self) -> usize {
        self.band_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }
}

/// An opened dataset: manifest metadata plus its trials.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trials: Vec<LabeledTrial>,
}

impl Dataset {
    pub fn subjects(&self) -> Vec<u32> {
        self.manifest.subject_ids.clone()
    }

    pub fn trials_of_subject(&self, subject: u32) -> Vec<&LabeledTrial> {
        self.trials.iter().filter(|t| t.subject == subject).collect()
    }
}
