//! Distance weighted sampling of negatives.
//!
//! For unit vectors in `dim` dimensions the pairwise distance `d` has density
//! proportional to `q(d) = d^(dim-2) (1 - d^2/4)^((dim-3)/2)`. A negative is
//! drawn with probability proportional to `min(lambda, 1/q(d))`, with `d`
//! clamped below at `dmin`. Everything is handled in log space.

use super::space::Space;
use super::{Batch, LossSpec, Selection};
use crate::error::{usage, Result};
use crate::rng::Rng;

/// `ln q(d)`; terms whose exponent is zero are dropped so that `d = 2`
/// does not produce `0 * -inf`.
fn log_density(d: f64, dim: usize) -> f64 {
    let dim = dim as f64;
    let mut out = 0.0;
    if dim != 2.0 {
        out += (dim - 2.0) * d.ln();
    }
    if dim != 3.0 {
        let inner = (1.0 - 0.25 * d * d).max(0.0);
        out += 0.5 * (dim - 3.0) * inner.ln();
    }
    out
}

/// Sampling probabilities over negatives at `distances` (euclidean, on the
/// unit sphere) for embeddings of dimension `dim`.
pub fn dws_negative_probabilities(distances: &[f64], dim: usize, lambda: f64, dmin: f64) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(usage("no negative candidates to sample from"));
    }
    let log_lambda = lambda.ln();
    let log_w: Vec<f64> = distances
        .iter()
        .map(|&d| (-log_density(d.max(dmin), dim)).min(log_lambda))
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(usage("every negative candidate has zero sampling weight"));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// One negative per ordered same-class pair `(a, p)`, drawn by inverse CDF
/// from a single uniform per pair.
pub(super) fn select(batch: &Batch, space: &Space, spec: &LossSpec, rng: &mut Rng) -> Result<Selection> {
    let dim = batch.dim();
    let mut out = Vec::new();
    for a in 0..batch.len() {
        let negatives: Vec<usize> = batch.negatives_of(a).collect();
        let distances: Vec<f64> = negatives.iter().map(|&n| space.dist(a, n)).collect();
        let probs = dws_negative_probabilities(&distances, dim, spec.dws_lambda, spec.dws_dmin)?;
        for p in batch.positives_of(a) {
            let u = rng.uniform();
            let mut acc = 0.0;
            let last = probs.iter().rposition(|&pr| pr > 0.0).expect("normalized weights");
            let mut pick = negatives[last];
            for (k, &pr) in probs.iter().enumerate() {
                acc += pr;
                if u < acc {
                    pick = negatives[k];
                    break;
                }
            }
            out.push([a, p, pick]);
        }
    }
    Ok(Selection::Hinge(out))
}
