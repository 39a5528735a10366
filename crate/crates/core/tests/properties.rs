use ndarray::Array2;
use proptest::prelude::*;

use tripmine::data::{split, SplitSpec};
use tripmine::eval::recall_at_k;
use tripmine::{io, mine_offline, negative_frequency, outlier_mask, pairwise, EmbeddingSet, ExtremePolicy, Metric, OutlierMask, Rng};

/// Random labelled set with every class holding at least `min_per_class` rows.
fn labelled_set(max_classes: usize, min_per_class: usize) -> impl Strategy<Value = EmbeddingSet> {
    (2..=max_classes, min_per_class..min_per_class + 4, 1usize..5).prop_flat_map(move |(classes, per, dim)| {
        let n = classes * per;
        prop::collection::vec(-10.0f64..10.0, n * dim).prop_map(move |data| {
            let labels = (0..n).map(|i| i % classes).collect();
            EmbeddingSet::new(Array2::from_shape_vec((n, dim), data).unwrap(), labels, classes).unwrap()
        })
    })
}

fn policy() -> impl Strategy<Value = ExtremePolicy> {
    prop::sample::select(ExtremePolicy::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mined_triplets_are_valid_extremes(set in labelled_set(4, 2), policy in policy(), seed in any::<u64>()) {
        let dist = pairwise(&set, Metric::SQUARED_EUCLIDEAN).unwrap();
        let mask = OutlierMask::none(set.len());
        let out = mine_offline(&set, &dist, &mask, policy, &Rng::new(seed)).unwrap();
        prop_assert_eq!(out.triplets.len(), set.len());
        prop_assert!(out.skips.is_empty());
        let labels = set.labels();
        for (a, t) in out.triplets.triplets.iter().enumerate() {
            prop_assert_eq!(t.anchor, a);
            t.validate(labels).unwrap();
            let (pos, neg) = t.policy.extremes().unwrap();
            let dp = dist.get(a, t.positive);
            let dn = dist.get(a, t.negative);
            for j in 0..set.len() {
                let d = dist.get(a, j);
                if j != a && labels[j] == labels[a] {
                    match pos {
                        tripmine::types::PositiveChoice::Hardest => prop_assert!(d <= dp),
                        tripmine::types::PositiveChoice::Easiest => prop_assert!(d >= dp),
                    }
                } else if labels[j] != labels[a] {
                    match neg {
                        tripmine::types::NegativeChoice::Hardest => prop_assert!(d >= dn),
                        tripmine::types::NegativeChoice::Easiest => prop_assert!(d <= dn),
                    }
                }
            }
        }
    }

    #[test]
    fn masked_candidates_never_appear(set in labelled_set(3, 4), z in 0.0f64..2.0, policy in policy()) {
        let dist = pairwise(&set, Metric::EUCLIDEAN).unwrap();
        let mask = outlier_mask(&dist, z).unwrap();
        if let Ok(out) = mine_offline(&set, &dist, &mask, policy, &Rng::new(1)) {
            for t in &out.triplets.triplets {
                prop_assert!(!mask.is_excluded(t.anchor, t.positive));
                prop_assert!(!mask.is_excluded(t.anchor, t.negative));
            }
            prop_assert_eq!(out.triplets.len() + out.skips.len(), set.len());
        }
    }

    #[test]
    fn frequency_rows_sum_to_anchor_counts(set in labelled_set(5, 2), seed in any::<u64>()) {
        let dist = pairwise(&set, Metric::SQUARED_EUCLIDEAN).unwrap();
        let out = mine_offline(&set, &dist, &OutlierMask::none(set.len()), ExtremePolicy::Assorted, &Rng::new(seed)).unwrap();
        let freq = negative_frequency(&out.triplets, &set).unwrap();
        let sizes = set.class_sizes();
        for (k, row) in freq.counts.iter().enumerate() {
            prop_assert_eq!(row[k], 0);
            prop_assert_eq!(row.iter().sum::<u64>(), sizes[k] as u64);
        }
    }

    #[test]
    fn recall_is_monotone_and_metric_invariant(set in labelled_set(3, 3)) {
        let ks: Vec<usize> = (1..set.len()).collect();
        let sq = recall_at_k(&set, &ks, Metric::SQUARED_EUCLIDEAN).unwrap();
        let eu = recall_at_k(&set, &ks, Metric::EUCLIDEAN).unwrap();
        prop_assert_eq!(&sq.recall_at, &eu.recall_at);
        let values: Vec<f64> = sq.recall_at.values().copied().collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(values[0], sq.nn_accuracy);
        // Every class has another member, so the last rank always hits.
        prop_assert_eq!(*values.last().unwrap(), 1.0);
    }

    #[test]
    fn recall_ignores_row_order(set in labelled_set(3, 3), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..set.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let shuffled = set.subset(&order).unwrap();
        let ks = [1, 2, 4];
        let a = recall_at_k(&set, &ks, Metric::SQUARED_EUCLIDEAN).unwrap();
        let b = recall_at_k(&shuffled, &ks, Metric::SQUARED_EUCLIDEAN).unwrap();
        // Exact distance ties may resolve differently, so compare on tie-free data only.
        let dist = pairwise(&set, Metric::SQUARED_EUCLIDEAN).unwrap();
        let tie_free = (0..set.len()).all(|i| {
            let mut row: Vec<f64> = dist.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row.windows(2).all(|w| w[0] != w[1])
        });
        if tie_free {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn split_partitions_every_row(set in labelled_set(3, 14), seed in any::<u64>()) {
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let s = split(&set, &spec).unwrap();
        let mut all: Vec<usize> = s.indices.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..set.len()).collect::<Vec<_>>());
        for (part, idx) in s.parts.iter().zip(&s.indices) {
            prop_assert_eq!(part, &set.subset(idx).unwrap());
        }
        prop_assert_eq!(&split(&set, &spec).unwrap().indices, &s.indices);
    }

    #[test]
    fn binary_round_trips(set in labelled_set(4, 2), policy in policy(), seed in any::<u64>()) {
        prop_assert_eq!(&io::decode_dataset(&io::encode_dataset(&set)).unwrap(), &set);
        let m = set.vectors().clone();
        prop_assert_eq!(&io::decode_matrix(&io::encode_matrix(&m)).unwrap(), &m);
        let dist = pairwise(&set, Metric::SQUARED_EUCLIDEAN).unwrap();
        let trip = mine_offline(&set, &dist, &OutlierMask::none(set.len()), policy, &Rng::new(seed)).unwrap().triplets;
        prop_assert_eq!(io::decode_triplets(&io::encode_triplets(&trip), set.labels()).unwrap(), trip);
    }

    #[test]
    fn csv_round_trips(set in labelled_set(3, 2), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        io::save_dataset_csv(&p, &set).unwrap();
        prop_assert_eq!(&io::load_dataset_csv(&p).unwrap(), &set);
        let dist = pairwise(&set, Metric::SQUARED_EUCLIDEAN).unwrap();
        let trip = mine_offline(&set, &dist, &OutlierMask::none(set.len()), ExtremePolicy::Assorted, &Rng::new(seed)).unwrap().triplets;
        let t = dir.path().join("t.csv");
        io::save_triplets_csv(&t, &trip).unwrap();
        prop_assert_eq!(io::load_triplets_csv(&t, set.labels(), seed).unwrap(), trip);
    }
}
