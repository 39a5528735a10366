//! Offline triplet mining over a whole split.
//!
//! Every instance is an anchor once. Its positive is the nearest or farthest
//! same-class instance and its negative the farthest or nearest other-class
//! instance, depending on the [`ExtremePolicy`]. Candidates flagged by the
//! [`OutlierMask`] for that anchor are skipped in every role.

use rayon::prelude::*;

use crate::distance::{DistanceMatrix, OutlierMask};
use crate::error::{usage, Result};
use crate::rng::Rng;
use crate::types::{EmbeddingSet, ExtremePolicy, NegativeChoice, PositiveChoice, Triplet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub source_policy: ExtremePolicy,
    pub seed: u64,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        self.triplets.iter().try_for_each(|t| t.validate(labels))
    }
}

/// Why an anchor produced no triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoPositive,
    NoNegative,
    /// The anchor itself is excluded by every other row of the mask.
    Outlier,
}

impl SkipReason {
    pub fn name(self) -> &'static str {
        match self {
            SkipReason::NoPositive => "no-positive",
            SkipReason::NoNegative => "no-negative",
            SkipReason::Outlier => "outlier",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub skipped: Vec<(usize, SkipReason)>,
}

impl SkipReport {
    pub fn len(&self) -> usize {
        self.skipped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skipped.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub triplets: TripletSet,
    pub skips: SkipReport,
}

/// Resolves the ASSORTED draw for `anchor` from the stream `(seed, anchor)`.
pub fn assorted_case(seed: u64, anchor: usize) -> ExtremePolicy {
    let mut rng = Rng::stream(seed, anchor as u64);
    ExtremePolicy::EXTREMES[rng.below(4)]
}

/// Extreme candidate in `candidates` by distance from the anchor row;
/// `want_max` picks the farthest. Ties go to the lowest index.
fn extreme_of(row: &[f64], candidates: impl Iterator<Item = usize>, want_max: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in candidates {
        let d = row[j];
        let better = match best {
            None => true,
            Some((_, b)) => {
                if want_max {
                    d > b
                } else {
                    d < b
                }
            }
        };
        if better {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

fn mine_anchor(
    set: &EmbeddingSet,
    dist: &DistanceMatrix,
    mask: &OutlierMask,
    policy: ExtremePolicy,
    seed: u64,
    a: usize,
) -> std::result::Result<Triplet, SkipReason> {
    if mask.is_global_outlier(a) {
        return Err(SkipReason::Outlier);
    }
    let resolved = match policy {
        ExtremePolicy::Assorted => assorted_case(seed, a),
        p => p,
    };
    let (pos_choice, neg_choice) = resolved.extremes().expect("resolved policy");
    let labels = set.labels();
    let y = labels[a];
    let row = dist.row(a);
    let n = set.len();

    let positives = (0..n).filter(|&j| j != a && labels[j] == y && !mask.is_excluded(a, j));
    let positive = extreme_of(row, positives, pos_choice == PositiveChoice::Hardest)
        .ok_or(SkipReason::NoPositive)?;
    let negatives = (0..n).filter(|&j| labels[j] != y && !mask.is_excluded(a, j));
    let negative = extreme_of(row, negatives, neg_choice == NegativeChoice::Easiest)
        .ok_or(SkipReason::NoNegative)?;
    Ok(Triplet {
        anchor: a,
        positive,
        negative,
        policy: resolved,
    })
}

/// Mines one triplet per anchor of `set`.
///
/// `dist` and `mask` must have been computed from `set`. The ASSORTED case
/// is drawn per anchor from an independent stream derived from
/// `(rng.seed(), anchor)`, so the result does not depend on scheduling.
pub fn mine_offline(
    set: &EmbeddingSet,
    dist: &DistanceMatrix,
    mask: &OutlierMask,
    policy: ExtremePolicy,
    rng: &Rng,
) -> Result<MiningOutcome> {
    let n = set.len();
    if dist.len() != n || mask.len() != n {
        return Err(usage(format!(
            "distance matrix ({}) / mask ({}) do not match the set ({n})",
            dist.len(),
            mask.len()
        )));
    }
    if let Some(k) = set.class_sizes().iter().position(|&s| s < 2) {
        return Err(usage(format!("class {k} has fewer than 2 members")));
    }
    let seed = rng.seed();
    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|a| mine_anchor(set, dist, mask, policy, seed, a))
        .collect();

    let mut triplets = Vec::with_capacity(n);
    let mut skips = SkipReport::default();
    for (a, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => triplets.push(t),
            Err(reason) => skips.skipped.push((a, reason)),
        }
    }
    if triplets.is_empty() {
        return Err(usage(format!("all {n} anchors were skipped")));
    }
    Ok(MiningOutcome {
        triplets: TripletSet {
            triplets,
            source_policy: policy,
            seed,
        },
        skips,
    })
}

/// `counts[i][j]`: number of triplets whose anchor has class `i` and whose
/// negative has class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeFrequencyMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl NegativeFrequencyMatrix {
    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn negative_frequency(triplets: &TripletSet, set: &EmbeddingSet) -> Result<NegativeFrequencyMatrix> {
    let c = set.class_count();
    let mut counts = vec![vec![0u64; c]; c];
    for t in &triplets.triplets {
        if t.anchor >= set.len() || t.negative >= set.len() {
            return Err(usage(format!(
                "triplet ({}, {}, {}) indexes past {} rows",
                t.anchor,
                t.positive,
                t.negative,
                set.len()
            )));
        }
        counts[set.label(t.anchor)][set.label(t.negative)] += 1;
    }
    Ok(NegativeFrequencyMatrix { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{outlier_mask, pairwise, DEFAULT_Z_THRESHOLD};
    use crate::metric::Metric;

    fn toy() -> EmbeddingSet {
        // Class A = {0, 1}, class B = {10, 12}.
        EmbeddingSet::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![12.0]], vec![0, 0, 1, 1])
            .unwrap()
    }

    fn mine(set: &EmbeddingSet, policy: ExtremePolicy) -> MiningOutcome {
        let d = pairwise(set, Metric::SQUARED_EUCLIDEAN).unwrap();
        mine_offline(set, &d, &OutlierMask::none(set.len()), policy, &Rng::new(0)).unwrap()
    }

    fn triple(t: &Triplet) -> (usize, usize, usize) {
        (t.anchor, t.positive, t.negative)
    }

    #[test]
    fn toy_extremes() {
        let e = toy();
        assert_eq!(triple(&mine(&e, ExtremePolicy::Epen).triplets.triplets[0]), (0, 1, 3));
        assert_eq!(triple(&mine(&e, ExtremePolicy::Ephn).triplets.triplets[0]), (0, 1, 2));
        assert_eq!(triple(&mine(&e, ExtremePolicy::Hphn).triplets.triplets[3]), (3, 2, 1));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let e = EmbeddingSet::from_rows(
            &[vec![0.0], vec![1.0], vec![-1.0], vec![5.0], vec![-5.0]],
            vec![0, 0, 0, 1, 1],
        )
        .unwrap();
        let out = mine(&e, ExtremePolicy::Ephn);
        assert_eq!(triple(&out.triplets.triplets[0]), (0, 1, 3));
    }

    #[test]
    fn assorted_resolves_to_a_concrete_case() {
        let mut rng = Rng::new(4);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let e = EmbeddingSet::from_rows(&rows, (0..40).map(|i| i % 4).collect()).unwrap();
        let out = mine(&e, ExtremePolicy::Assorted);
        assert_eq!(out.triplets.source_policy, ExtremePolicy::Assorted);
        let mut seen = std::collections::HashSet::new();
        for t in &out.triplets.triplets {
            assert_ne!(t.policy, ExtremePolicy::Assorted);
            assert_eq!(t.policy, assorted_case(0, t.anchor));
            seen.insert(t.policy);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let e = EmbeddingSet::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![0, 0, 1]).unwrap();
        let d = pairwise(&e, Metric::SQUARED_EUCLIDEAN).unwrap();
        let err = mine_offline(&e, &d, &OutlierMask::none(3), ExtremePolicy::Epen, &Rng::new(0));
        assert!(err.is_err());
    }

    #[test]
    fn masked_candidates_are_skipped_and_reported() {
        let mut rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 7) as f64 * 0.1, (i % 5) as f64 * 0.1]).collect();
        rows.push(vec![400.0, 0.0]);
        let labels: Vec<usize> = (0..31).map(|i| i % 3).collect();
        let e = EmbeddingSet::from_rows(&rows, labels).unwrap();
        let d = pairwise(&e, Metric::SQUARED_EUCLIDEAN).unwrap();
        let m = outlier_mask(&d, DEFAULT_Z_THRESHOLD).unwrap();
        for policy in ExtremePolicy::ALL {
            let out = mine_offline(&e, &d, &m, policy, &Rng::new(1)).unwrap();
            assert!(out.skips.skipped.contains(&(30, SkipReason::Outlier)));
            for t in &out.triplets.triplets {
                assert!(![t.anchor, t.positive, t.negative].contains(&30));
                assert!(!m.is_excluded(t.anchor, t.positive));
                assert!(!m.is_excluded(t.anchor, t.negative));
            }
            assert_eq!(out.triplets.len() + out.skips.len(), 31);
        }
    }

    #[test]
    fn frequency_tally() {
        let e = EmbeddingSet::from_rows(
            &[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]],
            vec![0, 0, 1, 1, 2, 2],
        )
        .unwrap();
        let t = |a, p, n| Triplet {
            anchor: a,
            positive: p,
            negative: n,
            policy: ExtremePolicy::Ephn,
        };
        let ts = TripletSet {
            triplets: vec![t(0, 1, 2), t(1, 0, 4), t(2, 3, 5)],
            source_policy: ExtremePolicy::Ephn,
            seed: 0,
        };
        let f = negative_frequency(&ts, &e).unwrap();
        assert_eq!(f.counts, vec![vec![0, 1, 1], vec![0, 0, 1], vec![0, 0, 0]]);
        let empty = TripletSet {
            triplets: vec![],
            source_policy: ExtremePolicy::Ephn,
            seed: 0,
        };
        let f = negative_frequency(&empty, &e).unwrap();
        assert_eq!(f.total(), 0);
        assert_eq!(f.class_count(), 3);
    }
}
