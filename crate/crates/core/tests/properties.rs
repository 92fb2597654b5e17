//! Property tests over randomly generated inputs.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use fedmem::embedding::{
    contrastive_loss, similarity_kernel, EmbeddedSample, Embedding, KernelConfig, EMBEDDING_DIM,
};
use fedmem::memdetect::{
    aggregate_report, confirm_matches, exclusion_set, intra_class_thresholds, knn_candidates,
    CandidatePair, ExclusionTracker, MemorizationReport, StdevMode,
};
use fedmem::metrics::{authpct, ct_score, fld_lite, qn_score};
use fedmem::verify::generalized_mean;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn vec256() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, EMBEDDING_DIM)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn emb(v: Vec<f64>) -> Embedding {
    Embedding::new(v).unwrap()
}

fn point_set(seed: u64, n: usize, sd: f64) -> Vec<Embedding> {
    cloud(&mut rng(seed), n, &[], sd)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_symmetric_and_scale_invariant(a in vec256(), b in vec256(), s in 0.01..50.0f64, t in 0.01..50.0f64) {
        let cfg = KernelConfig::default();
        let ab = similarity_kernel(&emb(a.clone()), &emb(b.clone()), &cfg).unwrap();
        let ba = similarity_kernel(&emb(b.clone()), &emb(a.clone()), &cfg).unwrap();
        prop_assert_eq!(ab, ba);
        let scaled = similarity_kernel(
            &emb(a.iter().map(|x| x * s).collect()),
            &emb(b.iter().map(|x| x * t).collect()),
            &cfg,
        ).unwrap();
        prop_assert!((scaled - ab).abs() <= 1e-9 * ab);
    }

    #[test]
    fn contrastive_loss_of_one_pair_is_zero(a in vec256(), b in vec256()) {
        let loss = contrastive_loss(&[(emb(a), emb(b))], &KernelConfig::default()).unwrap();
        prop_assert_eq!(loss, 0.0);
    }

    #[test]
    fn qn_is_monotone_in_each_argument(
        fid in 0.0..1000.0f64, v_c in 0.0..1.0f64, v_a in 0.0..1.0f64, r_c in 0.0..1.0f64,
        bump in 0.0..1.0f64, which in 0usize..4,
    ) {
        let mut args = [fid, v_c, v_a, r_c];
        let base = qn_score(args[0], args[1], args[2], args[3]);
        args[which] = if which == 0 { args[0] + bump * 100.0 } else { (args[which] + bump).min(1.0) };
        prop_assert!(qn_score(args[0], args[1], args[2], args[3]) >= base);
    }

    #[test]
    fn generalized_mean_is_monotone_in_p(values in prop::collection::vec(0.0..10.0f64, 1..20), p in 1.0..8.0f64, dp in 0.0..4.0f64) {
        let lo = generalized_mean(values.iter().copied(), p);
        let hi = generalized_mean(values.iter().copied(), p + dp);
        prop_assert!(hi >= lo - 1e-12 * lo.abs().max(1.0));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((generalized_mean(values.iter().copied(), 1.0) - mean).abs() <= 1e-12 * mean.max(1.0));
    }

    #[test]
    fn confirmation_invariants(
        scores in prop::collection::vec(0.0..=1.0f64, 0..60),
        n_gen in 1usize..12, n_train in 1usize..12, threshold in 0.05..0.95f64,
    ) {
        let candidates: Vec<CandidatePair> = scores.iter().enumerate().map(|(i, _)| CandidatePair {
            generated_id: format!("g{}", i % n_gen),
            train_id: format!("t{}", (i * 7) % n_train),
            l2_distance: i as f64 * 0.1,
            class_id: 0,
        }).collect();
        let mut it = scores.iter();
        let (checked, confirmed) = confirm_matches(&candidates, |_| Ok(*it.next().unwrap()), threshold).unwrap();
        let report: MemorizationReport = aggregate_report(checked, confirmed, n_gen).unwrap();
        let checked_keys: BTreeSet<_> = report.checked.iter().map(|p| (&p.pair.generated_id, &p.pair.train_id)).collect();
        for p in &report.confirmed {
            prop_assert!(checked_keys.contains(&(&p.pair.generated_id, &p.pair.train_id)));
            prop_assert!(p.score >= threshold);
        }
        if !report.confirmed.is_empty() {
            prop_assert!(report.v_c >= threshold);
        }
        let gens: BTreeSet<_> = report.confirmed.iter().map(|p| &p.pair.generated_id).collect();
        let trains: BTreeSet<_> = report.confirmed.iter().map(|p| &p.pair.train_id).collect();
        prop_assert_eq!(gens.len(), report.confirmed.len());
        prop_assert_eq!(trains.len(), report.confirmed.len());
        prop_assert!((0.0..=1.0).contains(&report.r_c));
        prop_assert!((0.0..=1.0).contains(&report.v_a) && (0.0..=1.0).contains(&report.v_c));
    }

    #[test]
    fn exclusion_matches_sort_oracle(counts in prop::collection::vec(0u64..50, 1..200), pct in 50.0..99.5f64) {
        let map: BTreeMap<String, u64> = counts.iter().enumerate().map(|(i, c)| (format!("s{i:03}"), *c)).collect();
        let got = exclusion_set(&map, pct).unwrap();
        let (min, max) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        let want: BTreeSet<String> = if min == max {
            BTreeSet::new()
        } else {
            let norm = |c: u64| (c - min) as f64 / (max - min) as f64;
            let mut sorted: Vec<f64> = counts.iter().map(|c| norm(*c)).collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
            let cutoff = sorted[rank.max(1) - 1];
            map.iter().filter(|(_, c)| norm(**c) >= cutoff && norm(**c) > 0.0).map(|(k, _)| k.clone()).collect()
        };
        prop_assert_eq!(got, want);
    }

    #[test]
    fn tracker_exclusions_never_shrink(batches in prop::collection::vec(prop::collection::vec(0usize..40, 0..10), 1..12)) {
        let ids: Vec<String> = (0..40).map(|i| format!("t{i:02}")).collect();
        let mut tracker = ExclusionTracker::new(ids.iter().map(String::as_str));
        let mut last = 0;
        for batch in batches {
            let mut report = MemorizationReport { n_generated: 1, ..MemorizationReport::default() };
            for i in batch {
                *report.per_train_counts.entry(ids[i].clone()).or_insert(0) += 1;
            }
            tracker.record(&report, 95.0).unwrap();
            prop_assert!(tracker.excluded.len() >= last);
            last = tracker.excluded.len();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn knn_ignores_train_order(seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut train = Vec::new();
        let mut generated = Vec::new();
        for c in 0..3u32 {
            let mut center = vec![0.0; 3];
            center[c as usize] = 10.0;
            train.extend(labelled("t", c, cloud(&mut r, 20, &center, 1.0)));
            let copies: Vec<Embedding> = train.iter().rev().take(6)
                .map(|t| emb(t.embedding.as_slice().iter().map(|x| x + 0.05 * gaussian(&mut r)).collect()))
                .collect();
            generated.extend(labelled("g", c, copies));
        }
        let thresholds = intra_class_thresholds(&train, StdevMode::Population).unwrap();
        let a = knn_candidates(&generated, &train, &thresholds, 5).unwrap();
        let mut shuffled: Vec<EmbeddedSample> = train.clone();
        shuffled.shuffle(&mut r);
        let b = knn_candidates(&generated, &shuffled, &intra_class_thresholds(&shuffled, StdevMode::Population).unwrap(), 5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn baselines_ignore_set_order(seed in 0u64..1000) {
        let train = point_set(seed, 40, 1.0);
        let test = point_set(seed + 1, 40, 1.0);
        let mut generated = point_set(seed + 2, 30, 1.0);
        generated.extend(train.iter().take(10).cloned());
        let (mut t2, mut s2, mut g2) = (train.clone(), test.clone(), generated.clone());
        let mut r = rng(seed);
        t2.shuffle(&mut r);
        s2.shuffle(&mut r);
        g2.shuffle(&mut r);
        prop_assert_eq!(authpct(&train, &generated).unwrap(), authpct(&t2, &g2).unwrap());
        prop_assert_eq!(ct_score(&train, &test, &generated, 3).unwrap(), ct_score(&t2, &s2, &g2, 3).unwrap());
        prop_assert_eq!(fld_lite(&train, &test, &generated, 5.0).unwrap(), fld_lite(&t2, &s2, &g2, 5.0).unwrap());
    }

    #[test]
    fn authpct_survives_isometries(seed in 0u64..1000, offset in -5.0..5.0f64) {
        let train = point_set(seed, 40, 1.0);
        let mut generated = point_set(seed + 1, 30, 1.0);
        generated.extend(train.iter().take(10).map(|t| emb(t.as_slice().iter().map(|x| x + 1e-4).collect())));
        // Householder reflection followed by a translation.
        let mut r = rng(seed + 2);
        let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| gaussian(&mut r)).collect();
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let map = |e: &Embedding| {
            let x = e.as_slice();
            let vx: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
            emb(x.iter().zip(&v).map(|(xi, vi)| xi - 2.0 * vi * vx / vv + offset).collect())
        };
        let t2: Vec<Embedding> = train.iter().map(map).collect();
        let g2: Vec<Embedding> = generated.iter().map(map).collect();
        prop_assert_eq!(authpct(&train, &generated).unwrap(), authpct(&t2, &g2).unwrap());
    }
}
