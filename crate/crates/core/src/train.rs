//! Training loops: classifier pretraining (feature space), online mining,
//! and offline triplet training.

use ndarray::{Array2, Axis};

use crate::error::{usage, Error, Result};
use crate::losses::{self, Batch, LossContext, LossKind, LossSpec, ProxyState, Selection};
use crate::model::{softmax_cross_entropy, Head, ModelParams};
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::sampler::make_balanced_batches;
use crate::types::{BatchSpec, EmbeddingSet};
use crate::mining::TripletSet;

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_ONLINE_BATCH: usize = 45;
pub const DEFAULT_OFFLINE_TRIPLETS: usize = 16;

// Stream ids under the run seed.
const STREAM_ORDER: u64 = 1;
const STREAM_LOSS: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Rows per online batch; `per_class = batch_size / classes`.
    pub batch_size: usize,
    /// Triplets per offline batch (three rows each).
    pub offline_triplets: usize,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_ONLINE_BATCH,
            offline_triplets: DEFAULT_OFFLINE_TRIPLETS,
            loss: LossSpec::new(LossKind::Ephn),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(usage("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.offline_triplets == 0 {
            return Err(usage("batch sizes must be positive"));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub entries: Vec<HistoryEntry>,
}

impl LossHistory {
    fn push(&mut self, epoch: usize, batch: usize, loss: f64) {
        self.entries.push(HistoryEntry { epoch, batch, loss });
    }

    /// Mean loss per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.entries.iter().map(|e| e.epoch + 1).max().unwrap_or(0);
        let mut sums = vec![(0.0, 0usize); epochs];
        for e in &self.entries {
            sums[e.epoch].0 += e.loss;
            sums[e.epoch].1 += 1;
        }
        sums.into_iter()
            .map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }
}

fn check_finite(what: &str, epoch: usize, batch: usize, value: f64, grad: &Array2<f64>) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "{what} loss is {value} at epoch {epoch}, batch {batch}"
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "{what} gradient is not finite at epoch {epoch}, batch {batch}"
        )));
    }
    Ok(())
}

fn check_embeddings(epoch: usize, batch: usize, emb: &Array2<f64>) -> Result<()> {
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "embedding is not finite at epoch {epoch}, batch {batch}"
        )));
    }
    Ok(())
}

fn check_inputs(set: &EmbeddingSet, params: &ModelParams) -> Result<()> {
    params.validate()?;
    if set.dim() != params.input_dim() {
        return Err(usage(format!(
            "data has {} features, model expects {}",
            set.dim(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Embeds every row of `set` with the embedding head.
pub fn embed_set(params: &ModelParams, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    check_inputs(set, params)?;
    set.with_vectors(params.embed(set.vectors())?)
}

/// Fraction of rows whose arg-max class score equals the label.
pub fn classifier_accuracy(params: &ModelParams, set: &EmbeddingSet) -> Result<f64> {
    check_inputs(set, params)?;
    let logits = params.logits(set.vectors())?;
    let hits = logits
        .axis_iter(Axis(0))
        .zip(set.labels())
        .filter(|(row, &y)| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count();
    Ok(hits as f64 / set.len() as f64)
}

/// Minimizes mean softmax cross-entropy on `set` with shuffled mini-batches
/// of `cfg.batch_size` rows (the last batch of an epoch may be smaller).
pub fn train_classifier(set: &EmbeddingSet, params: &mut ModelParams, opt: &mut Optimizer, cfg: &TrainConfig) -> Result<LossHistory> {
    cfg.validate()?;
    check_inputs(set, params)?;
    if params.class_count() < set.class_count() {
        return Err(usage(format!(
            "classifier has {} outputs for {} classes",
            params.class_count(),
            set.class_count()
        )));
    }
    let mut order_rng = Rng::stream(cfg.seed, STREAM_ORDER);
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let x = set.vectors().select(Axis(0), rows);
            let labels: Vec<usize> = rows.iter().map(|&i| set.label(i)).collect();
            let (logits, cache) = params.forward(&x, Head::Classifier)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            check_finite("cross-entropy", epoch, b, loss, &grad)?;
            let grads = params.backward(&cache, &grad)?;
            opt.step(params, &grads)?;
            history.push(epoch, b, loss);
        }
    }
    Ok(history)
}

/// Online mining: class-balanced batches of `cfg.batch_size` rows, the loss
/// mined inside each batch. Proxy state (PNCA) persists across batches.
pub fn train_online(set: &EmbeddingSet, params: &mut ModelParams, opt: &mut Optimizer, cfg: &TrainConfig) -> Result<LossHistory> {
    cfg.validate()?;
    check_inputs(set, params)?;
    let spec = BatchSpec::online(cfg.batch_size, set.class_count())?;
    let mut order_rng = Rng::stream(cfg.seed, STREAM_ORDER);
    let mut ctx = LossContext {
        rng: Rng::stream(cfg.seed, STREAM_LOSS),
        proxies: (cfg.loss.kind == LossKind::Pnca)
            .then(|| ProxyState::new(set.class_count(), params.embedding_dim())),
    };
    let mut history = LossHistory::default();
    for epoch in 0..cfg.epochs {
        let batches = make_balanced_batches(set.labels(), spec, &mut order_rng)?;
        if batches.is_empty() {
            return Err(usage("dataset too small for a single balanced batch"));
        }
        for (b, rows) in batches.iter().enumerate() {
            let x = set.vectors().select(Axis(0), rows);
            let labels: Vec<usize> = rows.iter().map(|&i| set.label(i)).collect();
            let (emb, cache) = params.forward(&x, Head::Embedding)?;
            check_embeddings(epoch, b, &emb)?;
            let batch = Batch::new(emb, labels)?;
            let result = losses::loss_and_grad(&batch, &cfg.loss, &mut ctx)?;
            check_finite(cfg.loss.kind.name(), epoch, b, result.value, &result.grad)?;
            let grads = params.backward(&cache, &result.grad)?;
            opt.step(params, &grads)?;
            history.push(epoch, b, result.value);
        }
    }
    Ok(history)
}

/// Value and embedding gradient of the plain triplet loss over `k` triplets
/// whose embeddings are stacked as anchors, positives, negatives.
fn stacked_triplet_loss(emb: Array2<f64>, k: usize, labels: Vec<usize>, spec: &LossSpec) -> Result<losses::LossResult> {
    let batch = Batch::unbalanced(emb, labels)?;
    let triplets = (0..k).map(|i| [i, k + i, 2 * k + i]).collect();
    let spec = LossSpec { kind: LossKind::Ba, ..*spec };
    losses::evaluate(&batch, &spec, &Selection::Hinge(triplets))
}

/// Offline training on mined triplets: each batch stacks the anchor,
/// positive and negative rows of `cfg.offline_triplets` triplets and
/// minimizes `sum [m + D(a,p) - D(a,n)]_+`. Triplet order is reshuffled
/// every epoch.
pub fn train_offline(
    triplets: &TripletSet,
    set: &EmbeddingSet,
    params: &mut ModelParams,
    opt: &mut Optimizer,
    cfg: &TrainConfig,
) -> Result<LossHistory> {
    cfg.validate()?;
    check_inputs(set, params)?;
    if triplets.is_empty() {
        return Err(usage("no triplets to train on"));
    }
    triplets.validate(set.labels())?;
    let mut order_rng = Rng::stream(cfg.seed, STREAM_ORDER);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut history = LossHistory::default();
    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for (b, chunk) in order.chunks(cfg.offline_triplets).enumerate() {
            let k = chunk.len();
            let ts: Vec<_> = chunk.iter().map(|&i| triplets.triplets[i]).collect();
            let rows: Vec<usize> = ts
                .iter()
                .map(|t| t.anchor)
                .chain(ts.iter().map(|t| t.positive))
                .chain(ts.iter().map(|t| t.negative))
                .collect();
            let x = set.vectors().select(Axis(0), &rows);
            let labels: Vec<usize> = rows.iter().map(|&i| set.label(i)).collect();
            let (emb, cache) = params.forward(&x, Head::Embedding)?;
            check_embeddings(epoch, b, &emb)?;
            let result = stacked_triplet_loss(emb, k, labels, &cfg.loss)?;
            check_finite("triplet", epoch, b, result.value, &result.grad)?;
            let grads = params.backward(&cache, &result.grad)?;
            opt.step(params, &grads)?;
            history.push(epoch, b, result.value);
        }
    }
    Ok(history)
}
