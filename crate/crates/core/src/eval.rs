//! Recall@k, nearest-neighbour accuracy and top-k retrieval.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::distance::pairwise;
use crate::error::{usage, Result};
use crate::metric::{distance, Metric};
use crate::types::EmbeddingSet;

pub const DEFAULT_RANKS: [usize; 4] = [1, 4, 8, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Fraction of queries with a same-class item among the k nearest.
    pub recall_at: BTreeMap<usize, f64>,
    /// 1-NN classification accuracy under the same gallery protocol.
    pub nn_accuracy: f64,
    pub query_count: usize,
}

impl EvalReport {
    /// Percentages laid out as `R@1 R@4 ... Acc.`.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for (k, v) in &self.recall_at {
            let _ = write!(head, "{:>8}", format!("R@{k}"));
            let _ = write!(row, "{:>8.2}", 100.0 * v);
        }
        let _ = write!(head, "{:>8}", "Acc.");
        let _ = write!(row, "{:>8.2}", 100.0 * self.nn_accuracy);
        format!("{head}\n{row}\n({} queries)\n", self.query_count)
    }
}

/// Orders gallery candidates by distance, then index.
fn key_cmp(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Zero-based rank of the nearest same-class candidate, or `None` when the
/// gallery holds no such candidate.
fn first_hit_rank(dists: &[f64], labels: &[usize], label: usize, skip: Option<usize>) -> Option<usize> {
    let candidates = || (0..dists.len()).filter(|&j| Some(j) != skip);
    let best = candidates()
        .filter(|&j| labels[j] == label)
        .map(|j| (dists[j], j))
        .min_by(|&a, &b| key_cmp(a, b))?;
    Some(
        candidates()
            .filter(|&j| key_cmp((dists[j], j), best) == Ordering::Less)
            .count(),
    )
}

fn check_ranks(ks: &[usize], gallery: usize) -> Result<()> {
    if ks.is_empty() {
        return Err(usage("no recall ranks requested"));
    }
    if let Some(k) = ks.iter().find(|&&k| k == 0 || k > gallery) {
        return Err(usage(format!("rank {k} is outside 1..={gallery} for this gallery")));
    }
    Ok(())
}

fn report(ranks: &[Option<usize>], ks: &[usize]) -> EvalReport {
    let q = ranks.len();
    let recall = |k: usize| ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count() as f64 / q as f64;
    EvalReport {
        recall_at: ks.iter().map(|&k| (k, recall(k))).collect(),
        nn_accuracy: recall(1),
        query_count: q,
    }
}

/// Recall@k over `set`, each row querying all other rows. Every k must be
/// below the set size.
pub fn recall_at_k(set: &EmbeddingSet, ks: &[usize], metric: Metric) -> Result<EvalReport> {
    let n = set.len();
    check_ranks(ks, n - 1)?;
    let dist = pairwise(set, metric)?;
    let labels = set.labels();
    let ranks: Vec<Option<usize>> = (0..n)
        .into_par_iter()
        .map(|i| first_hit_rank(dist.row(i), labels, labels[i], Some(i)))
        .collect();
    Ok(report(&ranks, ks))
}

/// Recall@k of `queries` retrieving from a separate `gallery`.
pub fn recall_at_k_gallery(queries: &EmbeddingSet, gallery: &EmbeddingSet, ks: &[usize], metric: Metric) -> Result<EvalReport> {
    if queries.dim() != gallery.dim() {
        return Err(usage(format!(
            "query dimension {} differs from gallery dimension {}",
            queries.dim(),
            gallery.dim()
        )));
    }
    check_ranks(ks, gallery.len())?;
    let ranks = (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let q = queries.row_slice(i);
            let dists = (0..gallery.len())
                .map(|j| distance(q, gallery.row_slice(j), metric))
                .collect::<Result<Vec<f64>>>()?;
            Ok(first_hit_rank(&dists, gallery.labels(), queries.label(i), None))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report(&ranks, ks))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved {
    pub index: usize,
    pub label: usize,
    pub distance: f64,
}

/// The `k` gallery rows nearest to `query`, ascending by distance with ties
/// to the lower index.
pub fn retrieve_topk(gallery: &EmbeddingSet, query: &[f64], k: usize, metric: Metric) -> Result<Vec<Retrieved>> {
    if k > gallery.len() {
        return Err(usage(format!("top-{k} requested from a gallery of {}", gallery.len())));
    }
    let mut all = (0..gallery.len())
        .map(|j| {
            Ok(Retrieved {
                index: j,
                label: gallery.label(j),
                distance: distance(query, gallery.row_slice(j), metric)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    all.sort_by(|a, b| key_cmp((a.distance, a.index), (b.distance, b.index)));
    all.truncate(k);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn set(rows: &[[f64; 2]], labels: &[usize]) -> EmbeddingSet {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        EmbeddingSet::from_rows(&rows, labels.to_vec()).unwrap()
    }

    #[test]
    fn separated_clusters_are_perfect() {
        let s = set(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [9.0, 9.0], [9.1, 9.0], [9.0, 9.1]], &[0, 0, 0, 1, 1, 1]);
        let r = recall_at_k(&s, &[1, 4], Metric::SQUARED_EUCLIDEAN).unwrap();
        assert_eq!(r.recall_at[&1], 1.0);
        assert_eq!(r.recall_at[&4], 1.0);
        assert_eq!(r.nn_accuracy, 1.0);
        assert_eq!(r.query_count, 6);
    }

    #[test]
    fn interleaved_points_miss_at_one() {
        // A B A B on a line: every nearest neighbour has the other label.
        let s = set(&[[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [3.0, 0.0]], &[0, 0, 1, 1]);
        let r = recall_at_k(&s, &[1, 3], Metric::SQUARED_EUCLIDEAN).unwrap();
        assert_eq!(r.recall_at[&1], 0.0);
        assert_eq!(r.recall_at[&3], 1.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        // Query 0 is equidistant from 1 (other class) and 2 (same class).
        let s = set(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]], &[0, 1, 0, 1]);
        let ranks: Vec<_> = {
            let d = pairwise(&s, Metric::SQUARED_EUCLIDEAN).unwrap();
            (0..4).map(|i| first_hit_rank(d.row(i), s.labels(), s.label(i), Some(i))).collect()
        };
        assert_eq!(ranks[0], Some(1));
        let top = retrieve_topk(&s, &[0.0, 0.0], 3, Metric::SQUARED_EUCLIDEAN).unwrap();
        assert_eq!(top.iter().map(|r| r.index).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn rank_bounds() {
        let s = set(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[0, 0, 1]);
        assert!(recall_at_k(&s, &[3], Metric::SQUARED_EUCLIDEAN).is_err());
        assert!(recall_at_k(&s, &[0], Metric::SQUARED_EUCLIDEAN).is_err());
        assert!(recall_at_k(&s, &[], Metric::SQUARED_EUCLIDEAN).is_err());
        assert!(retrieve_topk(&s, &[0.0, 0.0], 4, Metric::SQUARED_EUCLIDEAN).is_err());
        assert_eq!(retrieve_topk(&s, &[0.0, 0.0], 3, Metric::SQUARED_EUCLIDEAN).unwrap().len(), 3);
    }

    #[test]
    fn exact_match_comes_first() {
        let mut rng = Rng::new(1);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let labels = (0..20).map(|i| i % 3).collect();
        let s = EmbeddingSet::from_rows(&rows, labels).unwrap();
        let top = retrieve_topk(&s, &rows[7], 20, Metric::EUCLIDEAN).unwrap();
        assert_eq!(top[0].index, 7);
        assert_eq!(top[0].distance, 0.0);
        let mut idx: Vec<usize> = top.iter().map(|r| r.index).collect();
        idx.sort_unstable();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn gallery_variant_counts_all_queries() {
        let g = set(&[[0.0, 0.0], [9.0, 9.0]], &[0, 1]);
        let q = set(&[[0.1, 0.0], [8.0, 9.0], [1.0, 1.0]], &[0, 1, 1]);
        let r = recall_at_k_gallery(&q, &g, &[1, 2], Metric::SQUARED_EUCLIDEAN).unwrap();
        assert!((r.recall_at[&1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall_at[&2], 1.0);
    }

    #[test]
    fn table_layout() {
        let r = EvalReport {
            recall_at: [(1, 0.5), (4, 1.0)].into_iter().collect(),
            nn_accuracy: 0.5,
            query_count: 2,
        };
        let t = r.table();
        assert!(t.starts_with("     R@1     R@4    Acc.\n   50.00  100.00   50.00\n"), "{t}");
    }
}
