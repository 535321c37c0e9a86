//! Domain types shared by every module: samples, labeled/unlabeled sets,
//! class distributions, entropy scores and the pseudo-label records produced
//! by the selection engine.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating that a distribution sums to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DistributionError {
    #[error("distribution needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("all entries are zero")]
    AllZero,
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("entries sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("class count mismatch: {0} vs {1}")]
    ClassCountMismatch(usize, usize),
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SampleError {
    #[error("sample {id}: modality {modality} has dimension {got}, expected {expected}")]
    Dimension {
        id: u64,
        modality: Modality,
        got: usize,
        expected: usize,
    },
    #[error("sample {id}: feature value is not finite")]
    NonFinite { id: u64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error("sample {0} has no ground-truth label")]
    MissingLabel(u64),
    #[error("{samples} samples but {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
}

/// One of the two data modalities carried by every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    F,
    S,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::F => f.write_str("f"),
            Modality::S => f.write_str("s"),
        }
    }
}

/// Byte-size model for samples on the wire.
///
/// `size_bytes = header_bytes + bytes_per_value * (dim_f + dim_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeModel {
    pub header_bytes: u64,
    pub bytes_per_value: u64,
}

impl Default for SizeModel {
    fn default() -> Self {
        Self {
            header_bytes: 16,
            bytes_per_value: 8,
        }
    }
}

impl SizeModel {
    pub fn sample_bytes(&self, dim_f: usize, dim_s: usize) -> u64 {
        self.header_bytes + self.bytes_per_value * (dim_f + dim_s) as u64
    }
}

/// Shape shared by all samples of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub classes: usize,
    pub dim_f: usize,
    pub dim_s: usize,
    pub size: SizeModel,
}

impl Schema {
    pub fn sample_bytes(&self) -> u64 {
        self.size.sample_bytes(self.dim_f, self.dim_s)
    }
}

/// One multimodal data item.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    id: u64,
    feat_f: Vec<f64>,
    feat_s: Vec<f64>,
    true_label: Option<usize>,
    is_noise: bool,
    size_bytes: u64,
}

impl Sample {
    /// Builds a sample, validating it against `schema`.
    pub fn new(
        id: u64,
        feat_f: Vec<f64>,
        feat_s: Vec<f64>,
        true_label: Option<usize>,
        is_noise: bool,
        schema: &Schema,
    ) -> Result<Self, SampleError> {
        for (modality, feat, expected) in [
            (Modality::F, &feat_f, schema.dim_f),
            (Modality::S, &feat_s, schema.dim_s),
        ] {
            if feat.len() != expected {
                return Err(SampleError::Dimension {
                    id,
                    modality,
                    got: feat.len(),
                    expected,
                });
            }
            if feat.iter().any(|v| !v.is_finite()) {
                return Err(SampleError::NonFinite { id });
            }
        }
        if let Some(label) = true_label {
            if label >= schema.classes {
                return Err(SampleError::LabelOutOfRange {
                    label,
                    classes: schema.classes,
                });
            }
        }
        Ok(Self {
            id,
            feat_f,
            feat_s,
            true_label,
            is_noise,
            size_bytes: schema.sample_bytes(),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn feat_f(&self) -> &[f64] {
        &self.feat_f
    }

    pub fn feat_s(&self) -> &[f64] {
        &self.feat_s
    }

    pub fn features(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::F => &self.feat_f,
            Modality::S => &self.feat_s,
        }
    }

    pub fn true_label(&self) -> Option<usize> {
        self.true_label
    }

    pub fn is_noise(&self) -> bool {
        self.is_noise
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }
}

fn check_unique_ids<'a>(samples: impl Iterator<Item = &'a Sample>) -> Result<(), SampleError> {
    let mut seen = std::collections::HashSet::new();
    for s in samples {
        if !seen.insert(s.id) {
            return Err(SampleError::DuplicateId(s.id));
        }
    }
    Ok(())
}

/// Samples with their training labels (`n` of them).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    schema: Schema,
    samples: Vec<Sample>,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(schema: Schema, samples: Vec<Sample>, labels: Vec<usize>) -> Result<Self, SampleError> {
        if samples.len() != labels.len() {
            return Err(SampleError::LengthMismatch {
                samples: samples.len(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= schema.classes) {
            return Err(SampleError::LabelOutOfRange {
                label,
                classes: schema.classes,
            });
        }
        check_unique_ids(samples.iter())?;
        Ok(Self {
            schema,
            samples,
            labels,
        })
    }

    /// Labeled set whose labels are the samples' ground truth.
    ///
    /// Samples without a true label are rejected.
    pub fn from_ground_truth(schema: Schema, samples: Vec<Sample>) -> Result<Self, SampleError> {
        let labels = samples
            .iter()
            .map(|s| s.true_label.ok_or(SampleError::MissingLabel(s.id)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(schema, samples, labels)
    }

    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            samples: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sample, usize)> {
        self.samples.iter().zip(self.labels.iter().copied())
    }

    pub fn contains_id(&self, id: u64) -> bool {
        self.samples.iter().any(|s| s.id == id)
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Appends samples; rejects any id already present.
    pub fn extend(&mut self, items: impl IntoIterator<Item = (Sample, usize)>) -> Result<(), SampleError> {
        let mut ids: std::collections::HashSet<u64> = self.samples.iter().map(|s| s.id).collect();
        for (sample, label) in items {
            if label >= self.schema.classes {
                return Err(SampleError::LabelOutOfRange {
                    label,
                    classes: self.schema.classes,
                });
            }
            if !ids.insert(sample.id) {
                return Err(SampleError::DuplicateId(sample.id));
            }
            self.samples.push(sample);
            self.labels.push(label);
        }
        Ok(())
    }
}

/// Unlabeled pool (`m` samples). True labels, when known, are kept on the
/// samples for evaluation only; selection never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    schema: Schema,
    samples: Vec<Sample>,
}

impl UnlabeledSet {
    pub fn new(schema: Schema, samples: Vec<Sample>) -> Result<Self, SampleError> {
        check_unique_ids(samples.iter())?;
        Ok(Self { schema, samples })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

/// Normalized probability vector over `c >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    /// Normalizes a non-negative score vector into a distribution.
    pub fn from_raw(raw: &[f64]) -> Result<Self, DistributionError> {
        if raw.len() < 2 {
            return Err(DistributionError::TooFewClasses(raw.len()));
        }
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(DistributionError::NonFinite { index });
            }
            if value < 0.0 {
                return Err(DistributionError::NegativeEntry { index, value });
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(DistributionError::AllZero);
        }
        if !total.is_finite() {
            // Entries finite but the sum overflowed: rescale first.
            let max = raw.iter().cloned().fold(0.0_f64, f64::max);
            let scaled: Vec<f64> = raw.iter().map(|v| v / max).collect();
            return Self::from_raw(&scaled);
        }
        Ok(Self {
            probs: raw.iter().map(|v| v / total).collect(),
        })
    }

    /// Wraps an already-normalized vector, checking the invariants.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, DistributionError> {
        if probs.len() < 2 {
            return Err(DistributionError::TooFewClasses(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(DistributionError::NonFinite { index });
            }
            if value < 0.0 {
                return Err(DistributionError::NegativeEntry { index, value });
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::NotNormalized(total));
        }
        Ok(Self { probs })
    }

    /// Uniform distribution over `classes` classes.
    pub fn uniform(classes: usize) -> Result<Self, DistributionError> {
        if classes < 2 {
            return Err(DistributionError::TooFewClasses(classes));
        }
        Ok(Self {
            probs: vec![1.0 / classes as f64; classes],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Element-wise mean of two distributions over the same classes.
    pub fn mean(a: &Self, b: &Self) -> Result<Self, DistributionError> {
        if a.classes() != b.classes() {
            return Err(DistributionError::ClassCountMismatch(a.classes(), b.classes()));
        }
        let probs: Vec<f64> = a.probs.iter().zip(&b.probs).map(|(x, y)| 0.5 * (x + y)).collect();
        // Renormalize to absorb rounding.
        Self::from_raw(&probs)
    }
}

/// Normalizes `raw` into a [`ClassDistribution`].
pub fn make_distribution(raw: &[f64]) -> Result<ClassDistribution, DistributionError> {
    ClassDistribution::from_raw(raw)
}

/// Prediction entropy in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize, Default)]
pub struct EntropyScore(f64);

impl EntropyScore {
    /// Wraps a value, clamping tiny negative rounding residue to zero.
    pub fn new(value: f64) -> Self {
        debug_assert!(value.is_finite() && value > -1e-12, "invalid entropy {value}");
        Self(value.max(0.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Where a pseudo-label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Both modalities predicted the same class.
    Agreement,
    /// Modalities disagreed; this modality had the smaller entropy.
    Modality(Modality),
    /// Label from the averaged two-modality distribution (baselines).
    Fused,
    /// Ground truth attached by the cloud (offload-all ceiling).
    Oracle,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSource::Agreement => f.write_str("agreement"),
            LabelSource::Modality(m) => write!(f, "{m}"),
            LabelSource::Fused => f.write_str("fused"),
            LabelSource::Oracle => f.write_str("oracle"),
        }
    }
}

/// An automatically labeled sample with its uncertainty scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoLabel {
    pub sample_id: u64,
    pub label: usize,
    pub entropy_f: EntropyScore,
    pub entropy_s: EntropyScore,
    /// Mean of the two per-modality entropies.
    pub joint_entropy: EntropyScore,
    pub source: LabelSource,
}

/// Low-entropy candidates (entries with `joint_entropy <= threshold`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub entries: Vec<PseudoLabel>,
    pub threshold: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Auto-labeled samples chosen in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionBatch {
    pub entries: Vec<PseudoLabel>,
    pub iteration: usize,
    /// The `k` that was asked for.
    pub requested: usize,
}

impl SelectionBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// How many fewer items than requested were available.
    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.entries.len())
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.sample_id).collect()
    }

    /// Selected count per assigned label.
    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }
}
