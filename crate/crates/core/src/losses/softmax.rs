use ndarray::Array2;

use super::proxy::ProxyState;
use super::space::Space;
use super::{Batch, LossResult, Selection, SoftmaxTerm, Target};
use crate::error::{usage, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Score {
    /// `s = -D` for every target.
    NegDistance,
    /// `s = z_a . z_t`.
    Inner,
    /// `s = -D` for the positive, `+D` for negatives.
    NegDistanceLiteral,
}

/// One term per ordered same-class pair `(a, p)`, all other-class rows as negatives.
pub(super) fn select_nca(batch: &Batch) -> Selection {
    let mut terms = Vec::new();
    for a in 0..batch.len() {
        let negatives: Vec<Target> = batch.negatives_of(a).map(Target::Row).collect();
        for p in batch.positives_of(a) {
            terms.push(SoftmaxTerm {
                anchor: a,
                positive: Target::Row(p),
                negatives: negatives.clone(),
            });
        }
    }
    Selection::Softmax {
        terms,
        proxies: None,
    }
}

/// One term per anchor with its easiest (nearest) positive. `by_inner`
/// ranks positives by inner product, otherwise by distance.
pub(super) fn select_easy_positive(batch: &Batch, space: &Space, by_inner: bool) -> Result<Selection> {
    let mut terms = Vec::with_capacity(batch.len());
    for a in 0..batch.len() {
        batch.require_positive(a)?;
        let mut best: Option<(usize, f64)> = None;
        for p in batch.positives_of(a) {
            // Larger key is nearer.
            let key = if by_inner { space.dot(a, p) } else { -space.dist(a, p) };
            if best.is_none_or(|(_, b)| key > b) {
                best = Some((p, key));
            }
        }
        let (p, _) = best.expect("checked above");
        terms.push(SoftmaxTerm {
            anchor: a,
            positive: Target::Row(p),
            negatives: batch.negatives_of(a).map(Target::Row).collect(),
        });
    }
    Ok(Selection::Softmax {
        terms,
        proxies: None,
    })
}

/// NCA terms with every row replaced by its nearest defined proxy.
pub(super) fn select_proxy_nca(batch: &Batch, space: &Space, state: &ProxyState) -> Result<Selection> {
    let assigned: Vec<usize> = (0..batch.len())
        .map(|i| state.nearest(space.row(i)))
        .collect::<Result<_>>()?;
    let mut terms = Vec::new();
    for a in 0..batch.len() {
        let negatives: Vec<Target> = batch
            .negatives_of(a)
            .map(|n| Target::Proxy(assigned[n]))
            .collect();
        for p in batch.positives_of(a) {
            terms.push(SoftmaxTerm {
                anchor: a,
                positive: Target::Proxy(assigned[p]),
                negatives: negatives.clone(),
            });
        }
    }
    Ok(Selection::Softmax {
        terms,
        proxies: Some(state.proxies().clone()),
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

struct Scorer<'a> {
    space: &'a Space,
    proxies: Option<&'a Array2<f64>>,
    score: Score,
}

impl Scorer<'_> {
    fn proxy(&self, class: usize) -> Result<&[f64]> {
        let proxies = self
            .proxies
            .ok_or_else(|| usage("selection references proxies but carries none"))?;
        if class >= proxies.nrows() {
            return Err(usage(format!("proxy for class {class} is undefined")));
        }
        let d = proxies.ncols();
        Ok(&proxies.as_slice().expect("standard layout")[class * d..(class + 1) * d])
    }

    fn score(&self, a: usize, t: Target, positive: bool) -> Result<f64> {
        let sign = match (self.score, positive) {
            (Score::NegDistanceLiteral, false) => 1.0,
            _ => -1.0,
        };
        Ok(match (self.score, t) {
            (Score::Inner, Target::Row(j)) => self.space.dot(a, j),
            (Score::Inner, Target::Proxy(_)) => {
                return Err(usage("inner-product scores against proxies are not defined"))
            }
            (_, Target::Row(j)) => sign * self.space.dist(a, j),
            (_, Target::Proxy(c)) => sign * self.space.dist_to(a, self.proxy(c)?),
        })
    }

    /// Accumulates `coef * d score(a, t)`.
    fn add_grad(&self, gz: &mut Array2<f64>, a: usize, t: Target, positive: bool, coef: f64) -> Result<()> {
        let sign = match (self.score, positive) {
            (Score::NegDistanceLiteral, false) => 1.0,
            _ => -1.0,
        };
        match (self.score, t) {
            (Score::Inner, Target::Row(j)) => self.space.add_dot_grad(gz, a, j, coef),
            (Score::Inner, Target::Proxy(_)) => unreachable!("rejected by score()"),
            (_, Target::Row(j)) => self.space.add_dist_grad(gz, a, j, sign * coef),
            (_, Target::Proxy(c)) => {
                let point = self.proxy(c)?.to_vec();
                self.space.add_dist_grad_to_point(gz, a, &point, sign * coef)
            }
        }
        Ok(())
    }
}

/// `sum_terms -ln(exp(s_p) / Z)` where `Z` sums `exp(s_n)` over the
/// negatives, plus `exp(s_p)` when `include_positive`. Computed as
/// `-s_p + logsumexp(...)`.
pub(super) fn evaluate(
    space: &Space,
    terms: &[SoftmaxTerm],
    proxies: Option<&Array2<f64>>,
    score: Score,
    include_positive: bool,
) -> Result<LossResult> {
    let scorer = Scorer {
        space,
        proxies,
        score,
    };
    let mut value = 0.0;
    let mut gz = Array2::zeros(space.z.raw_dim());
    let mut scores = Vec::new();
    for term in terms {
        if term.negatives.is_empty() {
            return Err(usage(format!("anchor {} has no negatives", term.anchor)));
        }
        let a = term.anchor;
        let sp = scorer.score(a, term.positive, true)?;
        scores.clear();
        if include_positive {
            scores.push(sp);
        }
        for &t in &term.negatives {
            scores.push(scorer.score(a, t, false)?);
        }
        let lse = log_sum_exp(&scores);
        value += lse - sp;

        // d/ds_p = -1 + softmax_p (when in the denominator); d/ds_n = softmax_n.
        let offset = usize::from(include_positive);
        let mut coef_p = -1.0;
        if include_positive {
            coef_p += (sp - lse).exp();
        }
        scorer.add_grad(&mut gz, a, term.positive, true, coef_p)?;
        for (k, &t) in term.negatives.iter().enumerate() {
            let w = (scores[k + offset] - lse).exp();
            scorer.add_grad(&mut gz, a, t, false, w)?;
        }
    }
    if !value.is_finite() {
        return Err(crate::error::Error::Numeric(format!(
            "softmax loss is not finite ({value})"
        )));
    }
    Ok(LossResult {
        value,
        grad: space.backprop(gz),
        active_triplets: 0,
    })
}
