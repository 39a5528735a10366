//! Distance functions between embedding vectors.

use std::fmt;
use std::str::FromStr;

use crate::error::{usage, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MetricKind {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::SquaredEuclidean => "sqeuclidean",
            MetricKind::Euclidean => "euclidean",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sqeuclidean" | "squared-euclidean" | "sq" => Ok(MetricKind::SquaredEuclidean),
            "euclidean" | "l2" => Ok(MetricKind::Euclidean),
            other => Err(usage(format!("unknown metric `{other}`"))),
        }
    }
}

/// A distance function, optionally applied after projecting both inputs
/// onto the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Metric {
    pub kind: MetricKind,
    pub normalize_inputs: bool,
}

impl Metric {
    pub const SQUARED_EUCLIDEAN: Metric = Metric {
        kind: MetricKind::SquaredEuclidean,
        normalize_inputs: false,
    };
    pub const EUCLIDEAN: Metric = Metric {
        kind: MetricKind::Euclidean,
        normalize_inputs: false,
    };

    pub fn new(kind: MetricKind, normalize_inputs: bool) -> Self {
        Self {
            kind,
            normalize_inputs,
        }
    }

    /// Distance without validation. Inputs must have equal length.
    #[inline]
    pub(crate) fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        let sq = if self.normalize_inputs {
            let nu = norm(u);
            let nv = norm(v);
            u.iter()
                .zip(v)
                .map(|(a, b)| {
                    let d = a / nu - b / nv;
                    d * d
                })
                .sum::<f64>()
        } else {
            squared_l2(u, v)
        };
        match self.kind {
            MetricKind::SquaredEuclidean => sq,
            MetricKind::Euclidean => sq.sqrt(),
        }
    }

    /// Distance of already-prepared (normalized when required) vectors.
    #[inline]
    pub(crate) fn eval_prepared(&self, u: &[f64], v: &[f64]) -> f64 {
        let sq = squared_l2(u, v);
        match self.kind {
            MetricKind::SquaredEuclidean => sq,
            MetricKind::Euclidean => sq.sqrt(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.normalize_inputs {
            write!(f, "{} (unit-normalized)", self.kind)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

#[inline]
pub(crate) fn squared_l2(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

#[inline]
pub(crate) fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Distance between `u` and `v` under `metric`.
///
/// Symmetric by construction: the per-coordinate differences are squared, so
/// swapping the arguments yields the same bits.
pub fn distance(u: &[f64], v: &[f64], metric: Metric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(usage(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(usage("non-finite input to distance"));
    }
    if metric.normalize_inputs && (norm(u) == 0.0 || norm(v) == 0.0) {
        return Err(usage("cannot normalize a zero vector"));
    }
    Ok(metric.eval(u, v))
}
