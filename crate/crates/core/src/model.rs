//! Feed-forward embedding model with an optional classification head.
//!
//! `input -> [dense -> tanh] x hidden -> dense (embedding)`; the classifier
//! head is one more dense layer on top of the embedding and produces class
//! scores. Weights are stored `out x in`, so a layer computes `x W^T + b`
//! on a row batch.

use ndarray::{Array1, Array2, Axis};

use crate::error::{usage, Result};
use crate::rng::Rng;

/// Default width of the embedding (and feature) space.
pub const DEFAULT_EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Weights drawn from `N(0, 1/input)`, zero bias.
    pub fn fan_in(input: usize, output: usize, rng: &mut Rng) -> Self {
        let scale = (1.0 / input as f64).sqrt();
        let w: Vec<f64> = (0..input * output).map(|_| rng.normal() * scale).collect();
        Self {
            weights: Array2::from_shape_vec((output, input), w).expect("shape"),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Embedding,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Embedding trunk; `tanh` follows every layer except the last.
    pub layers: Vec<Dense>,
    pub classifier: Option<Dense>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each trunk layer (`inputs[0]` is the data).
    inputs: Vec<Array2<f64>>,
    embedding: Array2<f64>,
    head: Head,
}

impl ModelParams {
    /// Fan-in scaled random initialization. `classes = 0` omits the classifier.
    pub fn init(input_dim: usize, hidden: &[usize], embedding_dim: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || embedding_dim == 0 || hidden.contains(&0) {
            return Err(usage("layer widths must be positive"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(embedding_dim);
        let layers = sizes.windows(2).map(|w| Dense::fan_in(w[0], w[1], rng)).collect();
        let classifier = (classes > 0).then(|| Dense::fan_in(embedding_dim, classes, rng));
        Ok(Self { layers, classifier })
    }

    /// Checks shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(usage("model has no layers"));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(usage(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].output_dim(),
                    i + 1,
                    w[1].input_dim()
                )));
            }
        }
        for d in self.layers.iter().chain(&self.classifier) {
            if d.bias.len() != d.output_dim() {
                return Err(usage("bias length does not match layer output"));
            }
        }
        if let Some(c) = &self.classifier {
            if c.input_dim() != self.embedding_dim() {
                return Err(usage("classifier input does not match embedding width"));
            }
        }
        if self.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(usage("non-finite parameter"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn class_count(&self) -> usize {
        self.classifier.as_ref().map_or(0, Dense::output_dim)
    }

    /// Copy of the embedding trunk without the classifier head.
    pub fn embedding_trunk(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            classifier: None,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.input_dim(), d.output_dim());
        Self {
            layers: self.layers.iter().map(z).collect(),
            classifier: self.classifier.as_ref().map(z),
        }
    }

    /// Parameter tensors in a fixed order: per trunk layer weights then
    /// bias, then the classifier's.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .chain(&self.classifier)
            .flat_map(|d| {
                [
                    d.weights.as_slice().expect("standard layout"),
                    d.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .chain(self.classifier.as_mut())
            .flat_map(|d| {
                [
                    d.weights.as_slice_mut().expect("standard layout"),
                    d.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, x: &Array2<f64>, head: Head) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(usage(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if head == Head::Classifier && self.classifier.is_none() {
            return Err(usage("model has no classifier head"));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.apply(&h);
            if i < last {
                out.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = out;
        }
        let embedding = h;
        let output = match head {
            Head::Embedding => embedding.clone(),
            Head::Classifier => self.classifier.as_ref().expect("checked").apply(&embedding),
        };
        Ok((
            output,
            ForwardCache {
                inputs,
                embedding,
                head,
            },
        ))
    }

    /// Embedding-head output only.
    pub fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Head::Embedding)?.0)
    }

    /// Parameter gradients given `d loss / d output` for the head used in the
    /// forward pass that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Array2<f64>) -> Result<ModelParams> {
        let mut grads = self.zeros_like();
        let mut g = match cache.head {
            Head::Embedding => grad_output.to_owned(),
            Head::Classifier => {
                let head = self.classifier.as_ref().expect("forward checked");
                let gh = grads.classifier.as_mut().expect("same shape");
                gh.weights = grad_output.t().dot(&cache.embedding);
                gh.bias = grad_output.sum_axis(Axis(0));
                grad_output.dot(&head.weights)
            }
        };
        if g.dim() != cache.embedding.dim() {
            return Err(usage("gradient shape does not match the forward output"));
        }
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads.layers[i].weights = g.t().dot(input);
            grads.layers[i].bias = g.sum_axis(Axis(0));
            if i > 0 {
                let mut gin = g.dot(&self.layers[i].weights);
                // input of layer i is tanh output of layer i-1.
                gin.zip_mut_with(input, |gk, a| *gk *= 1.0 - a * a);
                g = gin;
            }
        }
        Ok(grads)
    }

    /// Class scores.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Head::Classifier)?.0)
    }
}

/// Mean softmax cross-entropy of `logits` against `labels`, and its gradient.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n || n == 0 {
        return Err(usage("label count does not match logits"));
    }
    let mut grad = Array2::zeros((n, c));
    let mut total = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let y = labels[i];
        if y >= c {
            return Err(usage(format!("label {y} outside {c} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
        for k in 0..c {
            grad[[i, k]] = (row[k] - lse).exp() / n as f64;
        }
        grad[[i, y]] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, max_relative_error, FD_STEP, TOLERANCE};
    use ndarray::arr2;

    fn flat(p: &ModelParams) -> Vec<f64> {
        p.tensors().into_iter().flatten().copied().collect()
    }

    fn unflat(p: &ModelParams, v: &[f64]) -> ModelParams {
        let mut q = p.clone();
        let mut k = 0;
        for t in q.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&v[k..k + n]);
            k += n;
        }
        q
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut p = ModelParams::init(3, &[4], 2, 0, &mut Rng::new(0)).unwrap();
        for d in &mut p.layers {
            d.weights.fill(0.0);
        }
        p.layers[1].bias = ndarray::arr1(&[0.5, -1.0]);
        let out = p.embed(&Array2::ones((5, 3))).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0]);
        }
    }

    #[test]
    fn identity_layer() {
        let p = ModelParams {
            layers: vec![Dense {
                weights: Array2::eye(3),
                bias: Array1::zeros(3),
            }],
            classifier: None,
        };
        let x = arr2(&[[1.0, -2.0, 3.5], [0.0, 0.25, -7.0]]);
        assert_eq!(p.embed(&x).unwrap(), x);
    }

    #[test]
    fn shape_errors() {
        let p = ModelParams::init(3, &[], 2, 0, &mut Rng::new(0)).unwrap();
        assert!(p.embed(&Array2::zeros((1, 4))).is_err());
        assert!(p.logits(&Array2::zeros((1, 3))).is_err());
        assert!(ModelParams::init(3, &[0], 2, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn uniform_predictor_cross_entropy_is_ln_c() {
        let (ce, _) = softmax_cross_entropy(&Array2::zeros((4, 7)), &[0, 3, 6, 2]).unwrap();
        assert!((ce - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn classifier_chain_gradcheck() {
        let mut rng = Rng::new(3);
        let p = ModelParams::init(5, &[6, 4], 3, 4, &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 5), |_| rng.normal());
        let labels = [0, 1, 2, 3, 0, 1, 2];
        let (logits, cache) = p.forward(&x, Head::Classifier).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let analytic = flat(&p.backward(&cache, &g).unwrap());
        let numeric = central_differences(&flat(&p), FD_STEP, |v| {
            let q = unflat(&p, v);
            Ok(softmax_cross_entropy(&q.logits(&x)?, &labels)?.0)
        })
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric) < TOLERANCE);
    }

    #[test]
    fn embedding_chain_gradcheck() {
        let mut rng = Rng::new(4);
        let p = ModelParams::init(4, &[5], 3, 0, &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 4), |_| rng.normal());
        let target = Array2::from_shape_fn((6, 3), |_| rng.normal());
        // loss = sum(out * target): d loss / d out = target.
        let (_, cache) = p.forward(&x, Head::Embedding).unwrap();
        let analytic = flat(&p.backward(&cache, &target).unwrap());
        let numeric = central_differences(&flat(&p), FD_STEP, |v| {
            Ok((unflat(&p, v).embed(&x)? * &target).sum())
        })
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric) < TOLERANCE);
    }
}
