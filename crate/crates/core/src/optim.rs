//! Gradient descent and Adam over [`ModelParams`].

use std::fmt;
use std::str::FromStr;

use crate::error::{usage, Error, Result};
use crate::model::ModelParams;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(usage(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. A zero learning rate leaves `params` untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(usage(format!("invalid learning rate {}", self.learning_rate)));
        }
        let grads = grads.tensors();
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || grads.iter().zip(&tensors).any(|(g, p)| g.len() != p.len()) {
            return Err(usage("gradient shapes do not match the parameters"));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                if lr == 0.0 {
                    return Ok(());
                }
                for (p, g) in tensors.iter_mut().zip(&grads) {
                    for (x, dx) in p.iter_mut().zip(g.iter()) {
                        *x -= lr * dx;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (k, (p, g)) in tensors.iter_mut().zip(&grads).enumerate() {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..g.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        if lr != 0.0 {
                            let mhat = m[i] / c1;
                            let vhat = v[i] / c2;
                            p[i] -= lr * mhat / (vhat.sqrt() + self.epsilon);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
