//! Class-balanced mini-batch sampling.

use std::collections::BTreeMap;

use crate::error::{usage, Result};
use crate::rng::Rng;
use crate::types::BatchSpec;

/// Splits one epoch into batches holding exactly `spec.per_class` indices
/// of every class, drawn without replacement.
///
/// Each class is shuffled independently; batch `k` takes positions
/// `k*w .. (k+1)*w` of every class's shuffled list, classes in ascending
/// order. The number of batches is limited by the smallest class and
/// leftover indices are dropped.
pub fn make_balanced_batches(labels: &[usize], spec: BatchSpec, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let w = spec.per_class;
    if w == 0 {
        return Err(usage("per-class batch count must be positive"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        groups.entry(y).or_default().push(i);
    }
    if groups.is_empty() {
        return Err(usage("no labels to sample from"));
    }
    if let Some((class, members)) = groups.iter().find(|(_, m)| m.len() < w) {
        return Err(usage(format!(
            "class {class} has {} members, fewer than {w} per batch",
            members.len()
        )));
    }
    for members in groups.values_mut() {
        rng.shuffle(members);
    }
    let count = groups.values().map(|m| m.len() / w).min().expect("non-empty");
    Ok((0..count)
        .map(|k| {
            groups
                .values()
                .flat_map(|m| m[k * w..(k + 1) * w].iter().copied())
                .collect()
        })
        .collect())
}
