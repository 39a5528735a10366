//! Online mining losses over a class-balanced mini-batch.
//!
//! Each loss is computed in two steps. [`select`] decides which terms enter
//! the loss (the triplets for hinge losses, the positive and negative targets
//! for softmax losses); it is the only step that consumes randomness or
//! reads proxy state. [`evaluate`] then computes the value and the gradient
//! with respect to every batch embedding for that fixed [`Selection`].
//! Freezing a selection makes the loss a smooth function of the embeddings
//! away from hinge kinks, which is what the finite-difference checks rely on.

mod dws;
mod hinge;
mod proxy;
mod softmax;
mod space;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

pub use dws::dws_negative_probabilities;
pub use proxy::ProxyState;

use crate::error::{usage, Error, Result};
use crate::metric::{Metric, MetricKind};
use crate::rng::Rng;
use crate::types::{BatchSpec, ExtremePolicy};
use space::Space;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Batch all.
    Ba,
    /// Batch semi-hard.
    Bsh,
    /// Hardest positive, hardest negative (batch hard).
    Hphn,
    Nca,
    /// Proxy-NCA.
    Pnca,
    /// Easy positive with inner products.
    Ep,
    /// Easy positive with negated distances.
    EpD,
    /// Distance weighted sampling.
    Dws,
    Epen,
    Ephn,
    Hpen,
    Assorted,
}

impl LossKind {
    pub const ALL: [LossKind; 12] = [
        LossKind::Ba,
        LossKind::Bsh,
        LossKind::Hphn,
        LossKind::Nca,
        LossKind::Pnca,
        LossKind::Ep,
        LossKind::EpD,
        LossKind::Dws,
        LossKind::Epen,
        LossKind::Ephn,
        LossKind::Hpen,
        LossKind::Assorted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ba => "ba",
            LossKind::Bsh => "bsh",
            LossKind::Hphn => "hphn",
            LossKind::Nca => "nca",
            LossKind::Pnca => "pnca",
            LossKind::Ep => "ep",
            LossKind::EpD => "epd",
            LossKind::Dws => "dws",
            LossKind::Epen => "epen",
            LossKind::Ephn => "ephn",
            LossKind::Hpen => "hpen",
            LossKind::Assorted => "assorted",
        }
    }

    /// The extreme-distance policy for the five extreme kinds.
    pub fn extreme_policy(self) -> Option<ExtremePolicy> {
        match self {
            LossKind::Epen => Some(ExtremePolicy::Epen),
            LossKind::Ephn => Some(ExtremePolicy::Ephn),
            LossKind::Hpen => Some(ExtremePolicy::Hpen),
            LossKind::Hphn => Some(ExtremePolicy::Hphn),
            LossKind::Assorted => Some(ExtremePolicy::Assorted),
            _ => None,
        }
    }

    /// Whether the loss is a sum of `[m + D(a,p) - D(a,n)]_+` terms.
    pub fn is_hinge(self) -> bool {
        !matches!(
            self,
            LossKind::Nca | LossKind::Pnca | LossKind::Ep | LossKind::EpD
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let key = match lower.as_str() {
            "ep-d" | "ep_d" => "epd",
            "bh" => "hphn",
            other => other,
        };
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| usage(format!("unknown loss `{s}`")))
    }
}

/// Loss choice and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub margin: f64,
    /// Upper clamp on the inverse-density weights of distance weighted sampling.
    pub dws_lambda: f64,
    /// Lower clamp on distances fed to the density of distance weighted sampling.
    pub dws_dmin: f64,
    pub proxy_momentum: f64,
    /// Metric for every kind except EP (inner products), EP-D (this kind on
    /// the unit sphere) and DWS (euclidean on the unit sphere).
    pub metric: Metric,
    /// Use `exp(+D)` for the negatives of EP-D, reproducing the formula as
    /// printed in the source rather than the intended `exp(-D)`.
    pub epd_literal_sign: bool,
}

impl LossSpec {
    pub const DEFAULT_MARGIN: f64 = 0.25;
    pub const DEFAULT_DWS_LAMBDA: f64 = 10.0;
    pub const DEFAULT_DWS_DMIN: f64 = 0.5;
    pub const DEFAULT_PROXY_MOMENTUM: f64 = 0.9;

    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            margin: Self::DEFAULT_MARGIN,
            dws_lambda: Self::DEFAULT_DWS_LAMBDA,
            dws_dmin: Self::DEFAULT_DWS_DMIN,
            proxy_momentum: Self::DEFAULT_PROXY_MOMENTUM,
            metric: Metric::SQUARED_EUCLIDEAN,
            epd_literal_sign: false,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(usage(format!("margin must be finite and >= 0, got {}", self.margin)));
        }
        if !(self.dws_lambda.is_finite() && self.dws_lambda > 0.0) {
            return Err(usage(format!("DWS lambda must be > 0, got {}", self.dws_lambda)));
        }
        if !(self.dws_dmin.is_finite() && self.dws_dmin > 0.0) {
            return Err(usage(format!("DWS minimum distance must be > 0, got {}", self.dws_dmin)));
        }
        if !(0.0..1.0).contains(&self.proxy_momentum) {
            return Err(usage(format!(
                "proxy momentum must lie in [0, 1), got {}",
                self.proxy_momentum
            )));
        }
        Ok(())
    }

    /// Metric actually used by `kind`.
    pub(crate) fn effective_metric(&self) -> Metric {
        match self.kind {
            LossKind::Ep => Metric::new(MetricKind::SquaredEuclidean, true),
            LossKind::EpD => Metric::new(self.metric.kind, true),
            LossKind::Dws => Metric::new(MetricKind::Euclidean, true),
            _ => self.metric,
        }
    }
}

/// A mini-batch of embeddings and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    embeddings: Array2<f64>,
    labels: Vec<usize>,
    structure: Option<BatchSpec>,
}

impl Batch {
    /// A class-balanced batch: every present class has the same number
    /// `w >= 2` of members, and at least two classes are present.
    pub fn new(embeddings: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let mut batch = Self::unbalanced(embeddings, labels)?;
        let groups = batch.class_groups();
        let w = groups.values().next().map_or(0, Vec::len);
        if let Some((class, members)) = groups.iter().find(|(_, m)| m.len() != w) {
            return Err(usage(format!(
                "batch is not class-balanced: class {class} has {} members, expected {w}",
                members.len()
            )));
        }
        if w < 2 {
            return Err(usage("every class in the batch needs at least 2 members"));
        }
        batch.structure = Some(BatchSpec {
            batch_size: batch.len(),
            per_class: w,
        });
        Ok(batch)
    }

    /// A batch without the balance requirement. Anchors without a positive
    /// contribute nothing to pair-sum losses and are an error for losses
    /// that select one positive per anchor.
    pub fn unbalanced(embeddings: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if embeddings.nrows() != labels.len() {
            return Err(usage(format!(
                "{} labels for {} embeddings",
                labels.len(),
                embeddings.nrows()
            )));
        }
        if embeddings.nrows() == 0 || embeddings.ncols() == 0 {
            return Err(usage("empty batch"));
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(usage("non-finite embedding in batch"));
        }
        let batch = Self {
            embeddings: embeddings.as_standard_layout().into_owned(),
            labels,
            structure: None,
        };
        if batch.class_groups().len() < 2 {
            return Err(usage("batch needs at least two classes"));
        }
        Ok(batch)
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn structure(&self) -> Option<BatchSpec> {
        self.structure
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    fn class_groups(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in self.labels.iter().enumerate() {
            groups.entry(y).or_default().push(i);
        }
        groups
    }

    /// Same-class rows other than `a`, ascending.
    pub(crate) fn positives_of(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        let y = self.labels[a];
        (0..self.len()).filter(move |&j| j != a && self.labels[j] == y)
    }

    /// Other-class rows, ascending.
    pub(crate) fn negatives_of(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        let y = self.labels[a];
        (0..self.len()).filter(move |&j| self.labels[j] != y)
    }

    pub(crate) fn require_positive(&self, a: usize) -> Result<()> {
        if self.positives_of(a).next().is_none() {
            return Err(usage(format!(
                "anchor {a} (class {}) has no positive in the batch",
                self.labels[a]
            )));
        }
        Ok(())
    }

    /// Rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let embeddings = self.embeddings.select(ndarray::Axis(0), perm);
        let labels = perm.iter().map(|&i| self.labels[i]).collect();
        let mut b = Self::unbalanced(embeddings, labels)?;
        b.structure = self.structure;
        Ok(b)
    }
}

/// Value and gradient of a loss over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// `d value / d embedding`, one row per batch row.
    pub grad: Array2<f64>,
    /// Hinge terms with a positive argument (0 for softmax losses).
    pub active_triplets: usize,
}

/// Target of a softmax score: another batch row, or a class proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Row(usize),
    Proxy(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxTerm {
    pub anchor: usize,
    pub positive: Target,
    pub negatives: Vec<Target>,
}

/// The terms a loss evaluates, fixed before differentiation.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// `(anchor, positive, negative)` row triples of a hinge loss.
    Hinge(Vec<[usize; 3]>),
    Softmax {
        terms: Vec<SoftmaxTerm>,
        /// Proxy coordinates (working space), one row per class, when
        /// targets reference proxies.
        proxies: Option<Array2<f64>>,
    },
}

impl Selection {
    /// Re-indexes rows for a batch permuted with `perm` (new row `i` is old
    /// row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let map_t = |t: &Target| match *t {
            Target::Row(r) => Target::Row(inverse[r]),
            p => p,
        };
        match self {
            Selection::Hinge(ts) => Selection::Hinge(
                ts.iter()
                    .map(|t| [inverse[t[0]], inverse[t[1]], inverse[t[2]]])
                    .collect(),
            ),
            Selection::Softmax { terms, proxies } => Selection::Softmax {
                terms: terms
                    .iter()
                    .map(|t| SoftmaxTerm {
                        anchor: inverse[t.anchor],
                        positive: map_t(&t.positive),
                        negatives: t.negatives.iter().map(map_t).collect(),
                    })
                    .collect(),
                proxies: proxies.clone(),
            },
        }
    }
}

/// Mutable state a loss may need across batches.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub rng: Rng,
    pub proxies: Option<ProxyState>,
}

impl LossContext {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Rng::new(seed),
            proxies: None,
        }
    }
}

/// Chooses the terms of `spec.kind` for `batch`.
///
/// Consumes `ctx.rng` for ASSORTED and DWS. For PNCA, classes present in the
/// batch whose proxy is still undefined are initialized to the batch class
/// mean (the proxy update itself happens in [`loss_and_grad`]).
pub fn select(batch: &Batch, spec: &LossSpec, ctx: &mut LossContext) -> Result<Selection> {
    spec.validate()?;
    let space = Space::new(batch.embeddings(), spec.effective_metric())?;
    match spec.kind {
        LossKind::Ba => Ok(hinge::select_batch_all(batch)),
        LossKind::Bsh => Ok(hinge::select_semi_hard(batch, &space)),
        LossKind::Nca => Ok(softmax::select_nca(batch)),
        LossKind::Ep | LossKind::EpD => softmax::select_easy_positive(batch, &space, spec.kind == LossKind::Ep),
        LossKind::Dws => dws::select(batch, &space, spec, &mut ctx.rng),
        LossKind::Pnca => {
            let state = ctx
                .proxies
                .get_or_insert_with(|| ProxyState::for_batch(batch));
            state.initialize_missing(batch, &space)?;
            softmax::select_proxy_nca(batch, &space, state)
        }
        kind => {
            let policy = kind.extreme_policy().expect("extreme kind");
            let choices = hinge::extreme_choices(batch.len(), policy, &mut ctx.rng);
            hinge::select_extreme(batch, &space, &choices)
        }
    }
}

/// Value and gradient of `spec.kind` for a fixed selection.
pub fn evaluate(batch: &Batch, spec: &LossSpec, selection: &Selection) -> Result<LossResult> {
    spec.validate()?;
    let space = Space::new(batch.embeddings(), spec.effective_metric())?;
    match selection {
        Selection::Hinge(triplets) => {
            if !spec.kind.is_hinge() {
                return Err(usage(format!("{} is not a hinge loss", spec.kind)));
            }
            hinge::evaluate(&space, triplets, spec.margin)
        }
        Selection::Softmax { terms, proxies } => {
            let score = match spec.kind {
                LossKind::Nca | LossKind::Pnca => softmax::Score::NegDistance,
                LossKind::Ep => softmax::Score::Inner,
                LossKind::EpD if spec.epd_literal_sign => softmax::Score::NegDistanceLiteral,
                LossKind::EpD => softmax::Score::NegDistance,
                other => return Err(usage(format!("{other} is not a softmax loss"))),
            };
            let include_positive = matches!(spec.kind, LossKind::Ep | LossKind::EpD);
            softmax::evaluate(&space, terms, proxies.as_ref(), score, include_positive)
        }
    }
}

/// Selects and evaluates `spec.kind` on `batch`, updating `ctx` (random
/// stream, proxies) as the loss requires.
pub fn loss_and_grad(batch: &Batch, spec: &LossSpec, ctx: &mut LossContext) -> Result<LossResult> {
    let selection = select(batch, spec, ctx)?;
    let result = evaluate(batch, spec, &selection)?;
    if spec.kind == LossKind::Pnca {
        let space = Space::new(batch.embeddings(), spec.effective_metric())?;
        if let Some(state) = ctx.proxies.as_mut() {
            state.blend_batch_means(batch, &space, spec.proxy_momentum)?;
        }
    }
    Ok(result)
}

/// Batch all: every `(a, p, n)` with `p != a` same-class and `n` other-class.
pub fn loss_batch_all(batch: &Batch, spec: &LossSpec) -> Result<LossResult> {
    let spec = LossSpec { kind: LossKind::Ba, ..*spec };
    evaluate(batch, &spec, &hinge::select_batch_all(batch))
}

/// Batch semi-hard: per `(a, p)`, the nearest negative farther than the
/// positive, falling back to the farthest negative.
pub fn loss_batch_semi_hard(batch: &Batch, spec: &LossSpec) -> Result<LossResult> {
    let spec = LossSpec { kind: LossKind::Bsh, ..*spec };
    let space = Space::new(batch.embeddings(), spec.effective_metric())?;
    evaluate(batch, &spec, &hinge::select_semi_hard(batch, &space))
}

/// One hinge term per anchor with extreme positive and negative. The rng is
/// consumed only for ASSORTED (two coin flips per anchor, in row order).
pub fn loss_extreme(batch: &Batch, spec: &LossSpec, policy: ExtremePolicy, rng: &mut Rng) -> Result<LossResult> {
    let kind = match policy {
        ExtremePolicy::Epen => LossKind::Epen,
        ExtremePolicy::Ephn => LossKind::Ephn,
        ExtremePolicy::Hpen => LossKind::Hpen,
        ExtremePolicy::Hphn => LossKind::Hphn,
        ExtremePolicy::Assorted => LossKind::Assorted,
    };
    let spec = LossSpec { kind, ..*spec };
    let space = Space::new(batch.embeddings(), spec.effective_metric())?;
    let choices = hinge::extreme_choices(batch.len(), policy, rng);
    let selection = hinge::select_extreme(batch, &space, &choices)?;
    evaluate(batch, &spec, &selection)
}

pub fn loss_nca(batch: &Batch, spec: &LossSpec) -> Result<LossResult> {
    let spec = LossSpec { kind: LossKind::Nca, ..*spec };
    evaluate(batch, &spec, &softmax::select_nca(batch))
}

/// Proxy-NCA against a snapshot of `state`; returns the loss and the state
/// after blending in this batch's class means.
pub fn loss_proxy_nca(batch: &Batch, spec: &LossSpec, state: &ProxyState) -> Result<(LossResult, ProxyState)> {
    let spec = LossSpec { kind: LossKind::Pnca, ..*spec };
    let mut ctx = LossContext {
        rng: Rng::new(0),
        proxies: Some(state.clone()),
    };
    let result = loss_and_grad(batch, &spec, &mut ctx)?;
    Ok((result, ctx.proxies.expect("proxy state")))
}

/// Easy positive (inner products) or EP-D (negated distances).
pub fn loss_easy_positive(batch: &Batch, spec: &LossSpec, use_distance_form: bool) -> Result<LossResult> {
    let kind = if use_distance_form { LossKind::EpD } else { LossKind::Ep };
    let spec = LossSpec { kind, ..*spec };
    let space = Space::new(batch.embeddings(), spec.effective_metric())?;
    let selection = softmax::select_easy_positive(batch, &space, !use_distance_form)?;
    evaluate(batch, &spec, &selection)
}

pub fn loss_dws(batch: &Batch, spec: &LossSpec, rng: &mut Rng) -> Result<LossResult> {
    let spec = LossSpec { kind: LossKind::Dws, ..*spec };
    let space = Space::new(batch.embeddings(), spec.effective_metric())?;
    let selection = dws::select(batch, &space, &spec, rng)?;
    evaluate(batch, &spec, &selection)
}

#[cfg(test)]
mod tests;
