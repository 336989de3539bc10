//! Synthetic two-domain benchmark with a controllable style gap.
//!
//! Both domains share per-class mean patterns; the target domain additionally
//! applies a per-channel affine distortion (gain and offset), which is the
//! kind of acquisition-style shift that separates real recording setups.
//! Class information survives the distortion, so transfer is possible while a
//! source-only model measurably degrades.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetManifest, FeatureMatrix, LabeledTrial};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub channels: usize,
    pub bands: usize,
    pub classes: usize,
    pub subjects_per_domain: usize,
    pub trials_per_class: usize,
    /// i.i.d. observation noise
    pub noise_sigma: f64,
    /// per-subject per-channel offset scale
    pub subject_jitter: f64,
    /// target-domain per-channel gain range (must stay positive)
    pub gain_low: f64,
    pub gain_high: f64,
    /// target-domain per-channel offset range
    pub offset_low: f64,
    pub offset_high: f64,
    /// minimum pairwise Frobenius distance between class mean patterns
    pub class_margin: f64,
    /// scale of the class mean patterns relative to the noise
    pub pattern_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            channels: 16,
            bands: 5,
            classes: 3,
            subjects_per_domain: 5,
            trials_per_class: 60,
            noise_sigma: 0.6,
            subject_jitter: 0.15,
            gain_low: 0.5,
            gain_high: 2.0,
            offset_low: -3.0,
            offset_high: 3.0,
            class_margin: 1.5,
            pattern_scale: 0.18,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.bands == 0 || self.classes == 0 {
            return Err(Error::Config("synthetic shape must be positive".into()));
        }
        if self.subjects_per_domain == 0 || self.trials_per_class == 0 {
            return Err(Error::Config("subject and trial counts must be positive".into()));
        }
        if self.gain_low <= 0.0 || self.gain_high < self.gain_low {
            return Err(Error::Config("gain range must be positive".into()));
        }
        if self.noise_sigma < 0.0 || self.subject_jitter < 0.0 || self.class_margin < 0.0 {
            return Err(Error::Config("noise, jitter and margin must be >= 0".into()));
        }
        if self.pattern_scale <= 0.0 {
            return Err(Error::Config("pattern_scale must be > 0".into()));
        }
        Ok(())
    }

    /// Canonical class names for the first four labels.
    pub fn class_names(&self) -> Vec<String> {
        let canonical = ["neutral", "sad", "happy", "fear"];
        (0..self.classes)
            .map(|i| {
                canonical
                    .get(i)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("class{i}"))
            })
            .collect()
    }

    pub fn band_names(&self) -> Vec<String> {
        if self.bands == 5 {
            ["delta", "theta", "alpha", "beta", "gamma"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            (0..self.bands).map(|i| format!("band{i}")).collect()
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        (0..self.channels).map(|i| format!("ch{i:02}")).collect()
    }
}

/// Draw class mean patterns until every pair is at least `margin` apart.
fn draw_class_means(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Vec<FeatureMatrix>> {
    let n = spec.channels * spec.bands;
    for _attempt in 0..64 {
        let means: Vec<FeatureMatrix> = (0..spec.classes)
            .map(|_| {
                let values: Vec<f64> = (0..n).map(|_| rng.normal() * spec.pattern_scale).collect();
                FeatureMatrix::new(spec.channels, spec.bands, values)
            })
            .collect::<Result<_>>()?;
        let ok = (0..spec.classes).all(|a| {
            (a + 1..spec.classes).all(|b| means[a].frobenius_distance(&means[b]) >= spec.class_margin)
        });
        if ok {
            return Ok(means);
        }
    }
    Err(Error::Config(format!(
        "could not draw class means {} apart; lower class_margin",
        spec.class_margin
    )))
}

struct DomainStyle {
    gains: Vec<f64>,
    offsets: Vec<f64>,
}

fn generate_domain(
    spec: &SyntheticSpec,
    means: &[FeatureMatrix],
    style: &DomainStyle,
    rng: &mut Rng,
) -> Result<Vec<LabeledTrial>> {
    let mut trials = Vec::new();
    for subject in 0..spec.subjects_per_domain as u32 {
        let jitter: Vec<f64> = (0..spec.channels)
            .map(|_| rng.normal() * spec.subject_jitter)
            .collect();
        for (label, mean) in means.iter().enumerate() {
            for _ in 0..spec.trials_per_class {
                let mut values = Vec::with_capacity(spec.channels * spec.bands);
                for c in 0..spec.channels {
                    for b in 0..spec.bands {
                        // the gain models an acquisition-chain scale, so it
                        // multiplies everything measured, noise included
                        let measured = mean.get(c, b) + jitter[c] + rng.normal() * spec.noise_sigma;
                        values.push(style.gains[c] * measured + style.offsets[c]);
                    }
                }
                trials.push(LabeledTrial {
                    features: FeatureMatrix::new(spec.channels, spec.bands, values)?,
                    label: label as u16,
                    subject,
                });
            }
        }
    }
    Ok(trials)
}

fn dataset_from(spec: &SyntheticSpec, name: &str, trials: Vec<LabeledTrial>) -> Dataset {
    let mut subject_ids: Vec<u32> = trials.iter().map(|t| t.subject).collect();
    subject_ids.sort_unstable();
    subject_ids.dedup();
    Dataset {
        manifest: DatasetManifest {
            name: name.to_string(),
            channel_names: spec.channel_names(),
            band_names: spec.band_names(),
            class_names: spec.class_names(),
            subject_ids,
            trial_index: Default::default(),
            data_file: String::new(),
        },
        trials,
    }
}

/// Generate the (source-like, target-like) dataset pair. The source domain
/// uses unit gain and zero offset; the target domain draws one per-channel
/// affine style from the configured ranges.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut mean_rng = rng.split();
    let mut style_rng = rng.split();
    let mut source_rng = rng.split();
    let mut target_rng = rng.split();

    let means = draw_class_means(spec, &mut mean_rng)?;

    let source_style = DomainStyle {
        gains: vec![1.0; spec.channels],
        offsets: vec![0.0; spec.channels],
    };
    let target_style = DomainStyle {
        gains: (0..spec.channels)
            .map(|_| style_rng.uniform(spec.gain_low, spec.gain_high))
            .collect(),
        offsets: (0..spec.channels)
            .map(|_| style_rng.uniform(spec.offset_low, spec.offset_high))
            .collect(),
    };

    let source = generate_domain(spec, &means, &source_style, &mut source_rng)?;
    let target = generate_domain(spec, &means, &target_style, &mut target_rng)?;
    Ok((
        dataset_from(spec, "synthetic-source", source),
        dataset_from(spec, "synthetic-target", target),
    ))
}

/// The class mean patterns alone (for tests that need the ground truth).
pub fn class_means(spec: &SyntheticSpec, seed: u64) -> Result<Vec<FeatureMatrix>> {
    let mut rng = Rng::new(seed);
    let mut mean_rng = rng.split();
    draw_class_means(spec, &mut mean_rng)
}
