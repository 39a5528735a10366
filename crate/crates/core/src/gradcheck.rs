//! Central finite-difference checks of analytic gradients.
//!
//! Selections (extreme indices, sampled negatives, proxy snapshots) are
//! frozen at the base point, so each check compares the analytic gradient
//! with the derivative of a fixed, piecewise-smooth function.

use ndarray::Array2;

use crate::error::Result;
use crate::losses::{self, Batch, LossContext, LossKind, LossSpec};
use crate::model::{Head, ModelParams};
use crate::rng::Rng;

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-6;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude below which entries are compared on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-3;

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, SCALE_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(SCALE_FLOOR))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe)?;
        probe[i] = orig - step;
        let minus = f(&probe)?;
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Random class-balanced batch: `classes x per_class` rows of dimension `dim`,
/// rows grouped by class.
pub fn random_batch(classes: usize, per_class: usize, dim: usize, rng: &mut Rng) -> Result<Batch> {
    let n = classes * per_class;
    let data: Vec<f64> = (0..n * dim).map(|_| rng.normal()).collect();
    let labels = (0..n).map(|i| i / per_class).collect();
    Batch::new(Array2::from_shape_vec((n, dim), data).expect("shape"), labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub kind: LossKind,
    pub value: f64,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Checks `spec.kind` on `batch` with the selection frozen at the base point.
pub fn check_loss(batch: &Batch, spec: &LossSpec, ctx: &mut LossContext) -> Result<GradcheckRow> {
    let selection = losses::select(batch, spec, ctx)?;
    let base = losses::evaluate(batch, spec, &selection)?;
    let (n, d) = batch.embeddings().dim();
    let labels = batch.labels().to_vec();
    let x = batch.embeddings().as_standard_layout().into_owned().into_raw_vec_and_offset().0;
    let numeric = central_differences(&x, FD_STEP, |probe| {
        let b = Batch::unbalanced(Array2::from_shape_vec((n, d), probe.to_vec()).expect("shape"), labels.clone())?;
        Ok(losses::evaluate(&b, spec, &selection)?.value)
    })?;
    let analytic = base.grad.as_standard_layout().into_owned().into_raw_vec_and_offset().0;
    Ok(GradcheckRow {
        kind: spec.kind,
        value: base.value,
        max_rel_error: max_relative_error(&analytic, &numeric),
        coordinates: x.len(),
    })
}

/// Default check: one random batch (4 classes x 3 rows, dimension 8) per loss kind.
pub fn check_all_losses(seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rng = Rng::new(seed);
    let batch = random_batch(4, 3, 8, &mut rng)?;
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let mut ctx = LossContext::new(seed);
            check_loss(&batch, &LossSpec::new(kind), &mut ctx)
        })
        .collect()
}

fn flatten(params: &ModelParams) -> Vec<f64> {
    params.tensors().into_iter().flatten().copied().collect()
}

fn unflatten(template: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut out = template.clone();
    let mut k = 0;
    for t in out.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&flat[k..k + n]);
        k += n;
    }
    out
}

/// Checks the gradient of `loss(model(x))` with respect to every model
/// parameter, the loss selection frozen at the base embeddings.
pub fn check_model_chain(params: &ModelParams, x: &Array2<f64>, labels: &[usize], spec: &LossSpec, ctx: &mut LossContext) -> Result<GradcheckRow> {
    let (emb, cache) = params.forward(x, Head::Embedding)?;
    let batch = Batch::new(emb, labels.to_vec())?;
    let selection = losses::select(&batch, spec, ctx)?;
    let base = losses::evaluate(&batch, spec, &selection)?;
    let analytic = flatten(&params.backward(&cache, &base.grad)?);
    let flat = flatten(params);
    let numeric = central_differences(&flat, FD_STEP, |probe| {
        let p = unflatten(params, probe);
        let b = Batch::unbalanced(p.embed(x)?, labels.to_vec())?;
        Ok(losses::evaluate(&b, spec, &selection)?.value)
    })?;
    Ok(GradcheckRow {
        kind: spec.kind,
        value: base.value,
        max_rel_error: max_relative_error(&analytic, &numeric),
        coordinates: flat.len(),
    })
}

/// Full-chain check for every loss kind: a `5 -> 6 -> 4` tanh model on a
/// random 4 x 3 batch.
pub fn check_all_model_chains(seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rng = Rng::new(seed);
    let inputs = random_batch(4, 3, 5, &mut rng)?;
    let params = ModelParams::init(5, &[6], 4, 0, &mut rng)?;
    let x = inputs.embeddings().clone();
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let mut ctx = LossContext::new(seed);
            check_model_chain(&params, &x, inputs.labels(), &LossSpec::new(kind), &mut ctx)
        })
        .collect()
}
