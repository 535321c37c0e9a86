use std::collections::HashSet;

use lltc_core::baselines::{co_training_select, random_select, self_training_select};
use lltc_core::classifier::LinearHead;
use lltc_core::llselect::{candidate_filter, resolve_label, select_balanced, select_batch};
use lltc_core::{
    entropy, make_distribution, CandidateSet, ClassDistribution, EntropyScore, LabelSource, ModelSnapshot, PseudoLabel,
    Sample, Schema, SizeModel, StrategyKind, UnlabeledSet,
};
use proptest::prelude::*;

fn dist(c: usize) -> impl Strategy<Value = ClassDistribution> {
    prop::collection::vec(0.0f64..1.0, c).prop_filter_map("all zero", |raw| make_distribution(&raw).ok())
}

fn pseudo(id: u64, label: usize, joint: f64) -> PseudoLabel {
    PseudoLabel {
        sample_id: id,
        label,
        entropy_f: EntropyScore::new(joint),
        entropy_s: EntropyScore::new(joint),
        joint_entropy: EntropyScore::new(joint),
        source: LabelSource::Agreement,
    }
}

fn candidates(max: usize, classes: usize) -> impl Strategy<Value = Vec<PseudoLabel>> {
    // a coarse entropy grid makes ties common
    prop::collection::vec((0..classes, 0u32..8), 0..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (label, e))| pseudo(i as u64 * 3 + 1, label, e as f64 * 0.125))
            .collect()
    })
}

fn schema(classes: usize, dim: usize) -> Schema {
    Schema {
        classes,
        dim_f: dim,
        dim_s: dim,
        size: SizeModel::default(),
    }
}

fn random_model(classes: usize, dim: usize, w: &[f64]) -> ModelSnapshot {
    let n = classes * (dim + 1);
    let f = LinearHead::from_weights(classes, dim, w[..n].to_vec()).unwrap();
    let s = LinearHead::from_weights(classes, dim, w[n..2 * n].to_vec()).unwrap();
    ModelSnapshot::new(1, f, s).unwrap()
}

fn pool(classes: usize, dim: usize, xs: &[f64]) -> UnlabeledSet {
    let sc = schema(classes, dim);
    let samples = xs
        .chunks(2 * dim)
        .enumerate()
        .map(|(i, c)| Sample::new(i as u64, c[..dim].to_vec(), c[dim..].to_vec(), None, false, &sc).unwrap())
        .collect();
    UnlabeledSet::new(sc, samples).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn entropy_is_bounded(d in (2usize..12).prop_flat_map(dist)) {
        let h = entropy(&d).value();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (d.classes() as f64).ln() + 1e-12);
    }

    #[test]
    fn entropy_ignores_order(d in (2usize..10).prop_flat_map(dist), seed in any::<u64>()) {
        let mut probs = d.probs().to_vec();
        lltc_core::rng::SimRng::new(seed, 0).shuffle(&mut probs);
        let e = make_distribution(&probs).unwrap();
        prop_assert!((entropy(&d).value() - entropy(&e).value()).abs() < 1e-12);
    }

    #[test]
    fn make_distribution_normalizes(raw in prop::collection::vec(0.0f64..1e6, 2..16)) {
        prop_assume!(raw.iter().any(|&v| v > 0.0));
        let d = make_distribution(&raw).unwrap();
        let total: f64 = d.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let mut best = 0;
        for (i, &v) in raw.iter().enumerate() {
            if v > raw[best] { best = i; }
        }
        prop_assert_eq!(d.argmax(), best);
    }

    #[test]
    fn sample_size_depends_only_on_shape(dim_f in 1usize..20, dim_s in 1usize..20, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let sc = Schema { classes: 2, dim_f, dim_s, size: SizeModel::default() };
        let x = Sample::new(1, vec![a; dim_f], vec![b; dim_s], None, false, &sc).unwrap();
        let y = Sample::new(2, vec![b; dim_f], vec![a; dim_s], Some(1), true, &sc).unwrap();
        prop_assert_eq!(x.size_bytes(), y.size_bytes());
        prop_assert_eq!(x.size_bytes(), sc.sample_bytes());
    }

    #[test]
    fn candidate_sets_nest(z in candidates(40, 4), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let small: HashSet<u64> = candidate_filter(&z, lo).entries.iter().map(|p| p.sample_id).collect();
        let large: HashSet<u64> = candidate_filter(&z, hi).entries.iter().map(|p| p.sample_id).collect();
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn select_batch_is_sorted_prefix(z in candidates(30, 3), k in 1usize..10) {
        prop_assume!(!z.is_empty());
        let set = CandidateSet { entries: z.clone(), threshold: 1.0 };
        let batch = select_batch(&set, k).unwrap();
        let mut order = z;
        order.sort_by(|a, b| a.joint_entropy.value().total_cmp(&b.joint_entropy.value()).then(a.sample_id.cmp(&b.sample_id)));
        let expect: Vec<u64> = order.iter().take(k).map(|p| p.sample_id).collect();
        prop_assert_eq!(batch.ids(), expect);
    }

    #[test]
    fn balanced_batch_size(z in candidates(40, 4), k in 1usize..30) {
        prop_assume!(!z.is_empty());
        let set = CandidateSet { entries: z.clone(), threshold: 1.0 };
        let batch = select_balanced(&set, k, 4).unwrap();
        prop_assert_eq!(batch.len(), k.min(z.len()));
        let ids: HashSet<u64> = batch.ids().into_iter().collect();
        prop_assert_eq!(ids.len(), batch.len());
        // a class below quota had nothing left to give
        let quota = k / 4;
        let counts = batch.class_counts();
        for c in 0..4 {
            let got = counts.get(&c).copied().unwrap_or(0);
            let available = z.iter().filter(|p| p.label == c).count();
            prop_assert!(got >= quota.min(available));
        }
    }

    #[test]
    fn resolve_label_ignores_raw_scale(
        rf in prop::collection::vec(0.01f64..3.0, 5),
        rs in prop::collection::vec(0.01f64..3.0, 5),
        a in 1e-3f64..1e3,
    ) {
        let scaled = |r: &[f64]| make_distribution(&r.iter().map(|v| v * a).collect::<Vec<_>>()).unwrap();
        let before = resolve_label(&make_distribution(&rf).unwrap(), &make_distribution(&rs).unwrap()).unwrap();
        let after = resolve_label(&scaled(&rf), &scaled(&rs)).unwrap();
        prop_assert_eq!(before.0, after.0);
    }

    #[test]
    fn bias_shift_leaves_prediction(w in prop::collection::vec(-2.0f64..2.0, 12), x in prop::collection::vec(-3.0f64..3.0, 3), shift in -50.0f64..50.0) {
        let base = LinearHead::from_weights(3, 3, w.clone()).unwrap();
        let mut shifted = w;
        for c in 0..3 { shifted[c * 4 + 3] += shift; }
        let moved = LinearHead::from_weights(3, 3, shifted).unwrap();
        for (p, q) in base.predict(&x).probs().iter().zip(moved.predict(&x).probs()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn baselines_return_min_k_pool(
        w in prop::collection::vec(-2.0f64..2.0, 18),
        xs in prop::collection::vec(-3.0f64..3.0, 4..80),
        k in 1usize..30,
        seed in any::<u64>(),
    ) {
        let n = xs.len() / 4 * 4;
        let model = random_model(3, 2, &w);
        let p = pool(3, 2, &xs[..n]);
        for batch in [
            self_training_select(&model, &p, k).unwrap(),
            co_training_select(&model, &p, k).unwrap(),
            random_select(&model, &p, k, seed).unwrap(),
        ] {
            prop_assert_eq!(batch.len(), k.min(p.len()));
            let ids: HashSet<u64> = batch.ids().into_iter().collect();
            prop_assert_eq!(ids.len(), batch.len());
        }
        let strat = lltc_core::Strategy::default_for(StrategyKind::Lltc);
        let lltc = strat.select(&model, &p, k, seed).unwrap().ids();
        prop_assert!(lltc.len() <= k.min(p.len()));
    }
}
