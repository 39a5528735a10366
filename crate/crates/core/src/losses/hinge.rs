use ndarray::Array2;

use super::space::Space;
use super::{Batch, LossResult, Selection};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::{ExtremePolicy, NegativeChoice, PositiveChoice};

/// Lowest-index argmin (or argmax) of `dist(a, j)` over `candidates`.
fn extreme(space: &Space, a: usize, candidates: impl Iterator<Item = usize>, want_max: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in candidates {
        let d = space.dist(a, j);
        let better = match best {
            None => true,
            Some((_, b)) => (want_max && d > b) || (!want_max && d < b),
        };
        if better {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

pub(super) fn select_batch_all(batch: &Batch) -> Selection {
    let mut out = Vec::new();
    for a in 0..batch.len() {
        for p in batch.positives_of(a) {
            for n in batch.negatives_of(a) {
                out.push([a, p, n]);
            }
        }
    }
    Selection::Hinge(out)
}

pub(super) fn select_semi_hard(batch: &Batch, space: &Space) -> Selection {
    let mut out = Vec::new();
    for a in 0..batch.len() {
        for p in batch.positives_of(a) {
            let dap = space.dist(a, p);
            let farther = batch.negatives_of(a).filter(|&n| space.dist(a, n) > dap);
            let n = extreme(space, a, farther, false)
                .or_else(|| extreme(space, a, batch.negatives_of(a), true))
                .expect("batch has another class");
            out.push([a, p, n]);
        }
    }
    Selection::Hinge(out)
}

/// Per-anchor extremes; ASSORTED flips two coins per anchor in row order
/// (positive extreme first).
pub(super) fn extreme_choices(len: usize, policy: ExtremePolicy, rng: &mut Rng) -> Vec<(PositiveChoice, NegativeChoice)> {
    match policy.extremes() {
        Some(pair) => vec![pair; len],
        None => (0..len)
            .map(|_| {
                let pos = if rng.coin() { PositiveChoice::Hardest } else { PositiveChoice::Easiest };
                let neg = if rng.coin() { NegativeChoice::Hardest } else { NegativeChoice::Easiest };
                (pos, neg)
            })
            .collect(),
    }
}

pub(super) fn select_extreme(
    batch: &Batch,
    space: &Space,
    choices: &[(PositiveChoice, NegativeChoice)],
) -> Result<Selection> {
    let mut out = Vec::with_capacity(batch.len());
    for (a, &(pos, neg)) in choices.iter().enumerate() {
        batch.require_positive(a)?;
        let p = extreme(space, a, batch.positives_of(a), pos == PositiveChoice::Hardest)
            .expect("checked above");
        let n = extreme(space, a, batch.negatives_of(a), neg == NegativeChoice::Easiest)
            .expect("batch has another class");
        out.push([a, p, n]);
    }
    Ok(Selection::Hinge(out))
}

/// `sum [m + D(a,p) - D(a,n)]_+` with the subgradient taken as zero where
/// the hinge argument is not strictly positive.
pub(super) fn evaluate(space: &Space, triplets: &[[usize; 3]], margin: f64) -> Result<LossResult> {
    let mut value = 0.0;
    let mut active = 0;
    let mut gz = Array2::zeros(space.z.raw_dim());
    for &[a, p, n] in triplets {
        let arg = margin + space.dist(a, p) - space.dist(a, n);
        if arg.is_nan() {
            return Err(Error::Numeric(format!("hinge argument is NaN for triplet ({a}, {p}, {n})")));
        }
        if arg > 0.0 {
            value += arg;
            active += 1;
            space.add_dist_grad(&mut gz, a, p, 1.0);
            space.add_dist_grad(&mut gz, a, n, -1.0);
        }
    }
    Ok(LossResult {
        value,
        grad: space.backprop(gz),
        active_triplets: active,
    })
}
