//! Comparison strategies: self-training, co-training, random selection and
//! offload-all, plus the [`Strategy`] switch that also covers LLTC itself.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_f, predict_fused, predict_s, ModelSnapshot};
use crate::llselect::{entropy, pseudo_label, select_lltc, LltcParams, SelectError};
use crate::rng::{stream, SimRng};
use crate::types::{LabelSource, Modality, PseudoLabel, SelectionBatch, UnlabeledSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Lltc,
    SelfTraining,
    CoTraining,
    Random,
    OffloadAll,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Lltc,
        StrategyKind::SelfTraining,
        StrategyKind::CoTraining,
        StrategyKind::Random,
        StrategyKind::OffloadAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Lltc => "lltc",
            StrategyKind::SelfTraining => "self_training",
            StrategyKind::CoTraining => "co_training",
            StrategyKind::Random => "random",
            StrategyKind::OffloadAll => "offload_all",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy kind `{s}`"))
    }
}

/// A selection strategy with its settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Lltc(LltcParams),
    SelfTraining,
    CoTraining,
    Random,
    /// Ships every collected item unlabeled; the cloud attaches ground truth.
    OffloadAll,
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Lltc(_) => StrategyKind::Lltc,
            Strategy::SelfTraining => StrategyKind::SelfTraining,
            Strategy::CoTraining => StrategyKind::CoTraining,
            Strategy::Random => StrategyKind::Random,
            Strategy::OffloadAll => StrategyKind::OffloadAll,
        }
    }

    pub fn default_for(kind: StrategyKind) -> Self {
        match kind {
            StrategyKind::Lltc => Strategy::Lltc(LltcParams::default()),
            StrategyKind::SelfTraining => Strategy::SelfTraining,
            StrategyKind::CoTraining => Strategy::CoTraining,
            StrategyKind::Random => Strategy::Random,
            StrategyKind::OffloadAll => Strategy::OffloadAll,
        }
    }

    /// Runs the strategy on `pool`. `seed` only matters for [`Strategy::Random`].
    pub fn select(
        &self,
        model: &ModelSnapshot,
        pool: &UnlabeledSet,
        k: usize,
        seed: u64,
    ) -> Result<Offload, SelectError> {
        let batch = match self {
            Strategy::Lltc(params) => select_lltc(model, pool, k, params)?,
            Strategy::SelfTraining => self_training_select(model, pool, k)?,
            Strategy::CoTraining => co_training_select(model, pool, k)?,
            Strategy::Random => random_select(model, pool, k, seed)?,
            Strategy::OffloadAll => {
                if pool.is_empty() {
                    return Err(SelectError::EmptyPool);
                }
                return Ok(Offload::Raw(pool.samples().iter().map(|s| s.id()).collect()));
            }
        };
        Ok(Offload::Labeled(batch))
    }
}

/// What the edge decided to send.
#[derive(Debug, Clone, PartialEq)]
pub enum Offload {
    /// Pseudo-labeled items.
    Labeled(SelectionBatch),
    /// Unlabeled raw items, by id.
    Raw(Vec<u64>),
}

impl Offload {
    pub fn ids(&self) -> Vec<u64> {
        match self {
            Offload::Labeled(b) => b.ids(),
            Offload::Raw(ids) => ids.clone(),
        }
    }
}

fn fused_label(model: &ModelSnapshot, id: u64, f: &[f64], s: &[f64]) -> Result<(PseudoLabel, f64), SelectError> {
    let fused = predict_fused(model, f, s)?;
    let mut p = pseudo_label(id, &predict_f(model, f)?, &predict_s(model, s)?)?;
    p.label = fused.argmax();
    p.source = LabelSource::Fused;
    Ok((p, entropy(&fused).value()))
}

/// Plain self-training: average the two modality distributions, label by the
/// fused argmax and keep the `k` lowest fused entropies. No threshold, no
/// class balance, no cross-modal check.
pub fn self_training_select(model: &ModelSnapshot, pool: &UnlabeledSet, k: usize) -> Result<SelectionBatch, SelectError> {
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    let mut scored = pool
        .samples()
        .iter()
        .map(|s| fused_label(model, s.id(), s.feat_f(), s.feat_s()))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|(a, ha), (b, hb)| ha.total_cmp(hb).then(a.sample_id.cmp(&b.sample_id)));
    Ok(SelectionBatch {
        entries: scored.into_iter().take(k).map(|(p, _)| p).collect(),
        iteration: 1,
        requested: k,
    })
}

/// Two-view co-training step: view f takes its `ceil(k/2)` most confident
/// samples labeled by f, then view s takes `floor(k/2)` of the rest labeled
/// by s.
pub fn co_training_select(model: &ModelSnapshot, pool: &UnlabeledSet, k: usize) -> Result<SelectionBatch, SelectError> {
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    let scored = pool
        .samples()
        .iter()
        .map(|s| {
            let d_f = predict_f(model, s.feat_f())?;
            let d_s = predict_s(model, s.feat_s())?;
            let p = pseudo_label(s.id(), &d_f, &d_s)?;
            Ok((p, d_f.argmax(), d_s.argmax()))
        })
        .collect::<Result<Vec<_>, SelectError>>()?;

    let mut entries: Vec<PseudoLabel> = Vec::with_capacity(k);
    let mut used = std::collections::HashSet::new();
    for (view, quota) in [(Modality::F, k - k / 2), (Modality::S, k / 2)] {
        let mut ranked: Vec<&(PseudoLabel, usize, usize)> =
            scored.iter().filter(|(p, _, _)| !used.contains(&p.sample_id)).collect();
        let key = |p: &PseudoLabel| match view {
            Modality::F => p.entropy_f.value(),
            Modality::S => p.entropy_s.value(),
        };
        ranked.sort_by(|(a, _, _), (b, _, _)| key(a).total_cmp(&key(b)).then(a.sample_id.cmp(&b.sample_id)));
        for (p, arg_f, arg_s) in ranked.into_iter().take(quota) {
            let mut chosen = p.clone();
            chosen.label = if view == Modality::F { *arg_f } else { *arg_s };
            chosen.source = LabelSource::Modality(view);
            used.insert(chosen.sample_id);
            entries.push(chosen);
        }
    }
    Ok(SelectionBatch {
        entries,
        iteration: 1,
        requested: k,
    })
}

/// Uniform draw of `min(k, |pool|)` samples without replacement, labeled by
/// the fused argmax. Output is ordered by sample id.
pub fn random_select(model: &ModelSnapshot, pool: &UnlabeledSet, k: usize, seed: u64) -> Result<SelectionBatch, SelectError> {
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    let mut rng = SimRng::new(seed, stream::RANDOM_SELECT);
    let samples = pool.samples();
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let take = k.min(idx.len());
    // partial Fisher-Yates from the front
    for i in 0..take {
        let j = i + rng.below((idx.len() - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx[..take].to_vec();
    chosen.sort_by_key(|&i| samples[i].id());
    let entries = chosen
        .into_iter()
        .map(|i| {
            let s = &samples[i];
            fused_label(model, s.id(), s.feat_f(), s.feat_s()).map(|(p, _)| p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SelectionBatch {
        entries,
        iteration: 1,
        requested: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::LinearHead;
    use crate::types::{Sample, Schema, SizeModel};

    fn schema() -> Schema {
        Schema {
            classes: 2,
            dim_f: 1,
            dim_s: 1,
            size: SizeModel::default(),
        }
    }

    /// Head scoring class 1 as `x` and class 0 as `-x`.
    fn model() -> ModelSnapshot {
        let head = || LinearHead::from_weights(2, 1, vec![-1.0, 0.0, 1.0, 0.0]).unwrap();
        ModelSnapshot::new(1, head(), head()).unwrap()
    }

    fn pool(points: &[(f64, f64)]) -> UnlabeledSet {
        let samples = points
            .iter()
            .enumerate()
            .map(|(i, &(f, s))| Sample::new(i as u64, vec![f], vec![s], None, false, &schema()).unwrap())
            .collect();
        UnlabeledSet::new(schema(), samples).unwrap()
    }

    #[test]
    fn self_training_single_sample() {
        let b = self_training_select(&model(), &pool(&[(2.0, 1.0)]), 3).unwrap();
        assert_eq!(b.ids(), vec![0]);
        assert_eq!(b.entries[0].label, 1);
        assert_eq!(b.entries[0].source, LabelSource::Fused);
    }

    #[test]
    fn self_training_identical_views_use_plain_entropy() {
        let m = model();
        let p = pool(&[(0.3, 0.3)]);
        let d = predict_f(&m, &[0.3]).unwrap();
        let fused = predict_fused(&m, &[0.3], &[0.3]).unwrap();
        for (a, b) in d.probs().iter().zip(fused.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let b = self_training_select(&m, &p, 1).unwrap();
        assert!((b.entries[0].entropy_f.value() - entropy(&fused).value()).abs() < 1e-15);
    }

    #[test]
    fn self_training_ranks_by_fused_entropy() {
        // sample 0 conflicts (f says 1, s says 0); sample 1 agrees mildly
        let b = self_training_select(&model(), &pool(&[(4.0, -4.0), (1.0, 1.0)]), 1).unwrap();
        assert_eq!(b.ids(), vec![1]);
    }

    #[test]
    fn co_training_splits_views() {
        // sample 0 is most confident in both views; f takes it, s takes sample 1
        let p = pool(&[(5.0, -5.0), (0.1, -3.0), (3.0, 0.2)]);
        let b = co_training_select(&model(), &p, 2).unwrap();
        assert_eq!(b.ids(), vec![0, 1]);
        assert_eq!(b.entries[0].source, LabelSource::Modality(Modality::F));
        assert_eq!(b.entries[0].label, 1);
        assert_eq!(b.entries[1].source, LabelSource::Modality(Modality::S));
        assert_eq!(b.entries[1].label, 0);
    }

    #[test]
    fn co_training_labels_can_disagree_with_fused() {
        // s is more confident on sample 0 (class 0) than f is (class 1); f takes
        // it anyway and labels it 1 while the fused argmax is 0
        let m = model();
        let p = pool(&[(2.0, -6.0), (0.0, 0.0)]);
        let b = co_training_select(&m, &p, 1).unwrap();
        assert_eq!(b.entries[0].label, 1);
        assert_eq!(predict_fused(&m, &[2.0], &[-6.0]).unwrap().argmax(), 0);
    }

    #[test]
    fn co_training_odd_k_and_small_pool() {
        let p = pool(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        assert_eq!(co_training_select(&model(), &p, 3).unwrap().len(), 3);
        assert_eq!(co_training_select(&model(), &p, 10).unwrap().len(), 3);
    }

    #[test]
    fn random_select_exhaustive_and_deterministic() {
        let p = pool(&[(1.0, 1.0), (2.0, -2.0), (-3.0, 3.0), (0.5, 0.5)]);
        assert_eq!(random_select(&model(), &p, 4, 1).unwrap().ids(), vec![0, 1, 2, 3]);
        let a = random_select(&model(), &p, 2, 42).unwrap();
        let b = random_select(&model(), &p, 2, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_pool_rejected() {
        let empty = UnlabeledSet::new(schema(), vec![]).unwrap();
        for s in StrategyKind::ALL {
            assert_eq!(
                Strategy::default_for(s).select(&model(), &empty, 2, 0),
                Err(SelectError::EmptyPool)
            );
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("pu_learning".parse::<StrategyKind>().is_err());
    }
}
