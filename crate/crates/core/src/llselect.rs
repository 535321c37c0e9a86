//! Entropy-driven labeling and selection of unlabeled multimodal samples.
//!
//! The pipeline for one iteration is:
//!
//! 1. [`score_pool`]: predict each sample under both modality heads, take the
//!    prediction entropy of each, resolve a single label and average the two
//!    entropies into the joint score.
//! 2. [`candidate_filter`]: keep entries whose joint entropy is at most the
//!    threshold.
//! 3. [`select_batch`] / [`select_balanced`]: take the `k` lowest-entropy
//!    candidates (optionally with an equal per-class quota), so that every
//!    selected entry scores no higher than any candidate left behind.
//!
//! Ties are broken by ascending sample id everywhere, so all outputs are pure
//! functions of their inputs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{predict_f, predict_s, ClassifierError, ModelSnapshot};
use crate::types::{
    CandidateSet, ClassDistribution, EntropyScore, LabelSource, Modality, PseudoLabel, SelectionBatch,
    UnlabeledSet,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SelectError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("pool is empty")]
    EmptyPool,
    #[error("batch size k must be at least 1")]
    ZeroBatch,
    #[error("distributions have {0} and {1} classes")]
    ClassCountMismatch(usize, usize),
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(d: &ClassDistribution) -> EntropyScore {
    let h: f64 = d
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    EntropyScore::new(h)
}

/// Mean of the two per-modality entropies.
pub fn joint_entropy(e_f: EntropyScore, e_s: EntropyScore) -> EntropyScore {
    EntropyScore::new(0.5 * e_f.value() + 0.5 * e_s.value())
}

/// Picks one label for a two-modality prediction.
///
/// Agreeing argmaxes give the shared class. On disagreement the modality with
/// the strictly smaller entropy wins; equal entropies go to modality f.
pub fn resolve_label(d_f: &ClassDistribution, d_s: &ClassDistribution) -> Result<(usize, LabelSource), SelectError> {
    if d_f.classes() != d_s.classes() {
        return Err(SelectError::ClassCountMismatch(d_f.classes(), d_s.classes()));
    }
    let (a_f, a_s) = (d_f.argmax(), d_s.argmax());
    if a_f == a_s {
        return Ok((a_f, LabelSource::Agreement));
    }
    if entropy(d_s) < entropy(d_f) {
        Ok((a_s, LabelSource::Modality(Modality::S)))
    } else {
        Ok((a_f, LabelSource::Modality(Modality::F)))
    }
}

/// Builds the pseudo-label record for one pair of modality predictions.
pub fn pseudo_label(
    sample_id: u64,
    d_f: &ClassDistribution,
    d_s: &ClassDistribution,
) -> Result<PseudoLabel, SelectError> {
    let (label, source) = resolve_label(d_f, d_s)?;
    let entropy_f = entropy(d_f);
    let entropy_s = entropy(d_s);
    Ok(PseudoLabel {
        sample_id,
        label,
        entropy_f,
        entropy_s,
        joint_entropy: joint_entropy(entropy_f, entropy_s),
        source,
    })
}

/// Labels every pool sample with `model`; output is ordered by sample id.
pub fn score_pool(model: &ModelSnapshot, pool: &UnlabeledSet) -> Result<Vec<PseudoLabel>, SelectError> {
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    let mut out = pool
        .samples()
        .iter()
        .map(|s| {
            let d_f = predict_f(model, s.feat_f())?;
            let d_s = predict_s(model, s.feat_s())?;
            pseudo_label(s.id(), &d_f, &d_s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by_key(|p| p.sample_id);
    Ok(out)
}

/// Which entropy ranks candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBy {
    /// Mean of both modality entropies (multimodal mode).
    #[default]
    Joint,
    /// A single modality's entropy (single-modality mode).
    F,
    S,
}

impl ScoreBy {
    pub fn key(self, p: &PseudoLabel) -> f64 {
        match self {
            ScoreBy::Joint => p.joint_entropy.value(),
            ScoreBy::F => p.entropy_f.value(),
            ScoreBy::S => p.entropy_s.value(),
        }
    }

    fn cmp(self, a: &PseudoLabel, b: &PseudoLabel) -> Ordering {
        self.key(a)
            .total_cmp(&self.key(b))
            .then(a.sample_id.cmp(&b.sample_id))
    }
}

/// Default candidate threshold: half the maximum entropy, `0.5 ln c`.
pub fn default_threshold(classes: usize) -> f64 {
    0.5 * (classes as f64).ln()
}

/// Keeps entries whose joint entropy is at most `tau` (inclusive), in order.
pub fn candidate_filter(scored: &[PseudoLabel], tau: f64) -> CandidateSet {
    candidate_filter_by(scored, tau, ScoreBy::Joint)
}

pub fn candidate_filter_by(scored: &[PseudoLabel], tau: f64, by: ScoreBy) -> CandidateSet {
    debug_assert!(tau >= 0.0);
    CandidateSet {
        entries: scored.iter().filter(|p| by.key(p) <= tau).cloned().collect(),
        threshold: tau,
    }
}

/// The `k` lowest-joint-entropy candidates, ties by ascending id.
///
/// Every selected entry has entropy no greater than every unselected one.
/// When `|z| < k` the whole set is returned and [`SelectionBatch::shortfall`]
/// reports the gap.
pub fn select_batch(z: &CandidateSet, k: usize) -> Result<SelectionBatch, SelectError> {
    select_batch_by(z, k, ScoreBy::Joint)
}

pub fn select_batch_by(z: &CandidateSet, k: usize, by: ScoreBy) -> Result<SelectionBatch, SelectError> {
    if k == 0 {
        return Err(SelectError::ZeroBatch);
    }
    if z.is_empty() {
        return Err(SelectError::EmptyCandidateSet);
    }
    let mut ranked: Vec<&PseudoLabel> = z.entries.iter().collect();
    ranked.sort_by(|a, b| by.cmp(a, b));
    Ok(SelectionBatch {
        entries: ranked.into_iter().take(k).cloned().collect(),
        iteration: 1,
        requested: k,
    })
}

/// Class-balanced variant of [`select_batch`].
///
/// Each predicted class first contributes up to `floor(k / c)` of its own
/// lowest-entropy entries; any slots left are filled from the remaining
/// candidates in global entropy order. Output is sorted by (entropy, id).
pub fn select_balanced(z: &CandidateSet, k: usize, classes: usize) -> Result<SelectionBatch, SelectError> {
    select_balanced_by(z, k, classes, ScoreBy::Joint)
}

pub fn select_balanced_by(
    z: &CandidateSet,
    k: usize,
    classes: usize,
    by: ScoreBy,
) -> Result<SelectionBatch, SelectError> {
    if k == 0 {
        return Err(SelectError::ZeroBatch);
    }
    if z.is_empty() {
        return Err(SelectError::EmptyCandidateSet);
    }
    let quota = k / classes.max(1);
    let mut ranked: Vec<&PseudoLabel> = z.entries.iter().collect();
    ranked.sort_by(|a, b| by.cmp(a, b));

    let mut taken = vec![false; ranked.len()];
    let mut per_class = vec![0usize; classes];
    let mut count = 0;
    for (i, p) in ranked.iter().enumerate() {
        if p.label < classes && per_class[p.label] < quota {
            per_class[p.label] += 1;
            taken[i] = true;
            count += 1;
        }
    }
    for t in taken.iter_mut() {
        if count >= k {
            break;
        }
        if !*t {
            *t = true;
            count += 1;
        }
    }
    let entries = ranked
        .into_iter()
        .zip(taken)
        .filter(|&(_, t)| t)
        .map(|(p, _)| p.clone())
        .collect();
    Ok(SelectionBatch {
        entries,
        iteration: 1,
        requested: k,
    })
}

/// Per-iteration batch sizes `k_t = k0 + t * growth`, `t = 0..n_iters`.
pub fn iteration_schedule(k0: usize, n_iters: usize, growth: usize) -> Vec<usize> {
    (0..n_iters).map(|t| k0 + t * growth).collect()
}

/// Settings for the full label-less selection step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LltcParams {
    /// Candidate threshold; `None` means [`default_threshold`].
    pub threshold: Option<f64>,
    /// Equal per-class quota within each batch.
    pub balanced: bool,
    pub score: ScoreBy,
}

impl Default for LltcParams {
    fn default() -> Self {
        Self {
            threshold: None,
            balanced: true,
            score: ScoreBy::Joint,
        }
    }
}

impl LltcParams {
    pub fn threshold_for(&self, classes: usize) -> f64 {
        self.threshold.unwrap_or_else(|| default_threshold(classes))
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        match self.threshold {
            Some(t) if !(t >= 0.0 && t.is_finite()) => Err(SelectError::InvalidThreshold(t)),
            _ => Ok(()),
        }
    }
}

/// Score, filter and select `k` samples from `pool`.
///
/// An empty candidate set yields an empty batch whose shortfall is `k`.
pub fn select_lltc(
    model: &ModelSnapshot,
    pool: &UnlabeledSet,
    k: usize,
    params: &LltcParams,
) -> Result<SelectionBatch, SelectError> {
    params.validate()?;
    let scored = score_pool(model, pool)?;
    let classes = model.classes();
    let z = candidate_filter_by(&scored, params.threshold_for(classes), params.score);
    if z.is_empty() {
        return Ok(SelectionBatch {
            entries: Vec::new(),
            iteration: 1,
            requested: k,
        });
    }
    if params.balanced {
        select_balanced_by(&z, k, classes, params.score)
    } else {
        select_batch_by(&z, k, params.score)
    }
}
