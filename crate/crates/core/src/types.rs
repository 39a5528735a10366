//! Domain types shared by mining, training and evaluation.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{usage, Error, Result};

/// N labelled vectors of dimension d, with labels in `[0, class_count)`.
///
/// Construction validates every invariant, so downstream code never sees
/// non-finite coordinates or an empty class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl EmbeddingSet {
    pub fn new(vectors: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let (n, d) = vectors.dim();
        if n == 0 || d == 0 {
            return Err(usage(format!("embedding set must be non-empty, got {n}x{d}")));
        }
        if labels.len() != n {
            return Err(usage(format!(
                "{} labels for {n} vectors",
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(usage("class_count must be positive"));
        }
        let mut seen = vec![false; class_count];
        for (i, &y) in labels.iter().enumerate() {
            if y >= class_count {
                return Err(usage(format!(
                    "label {y} of row {i} is outside [0, {class_count})"
                )));
            }
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(usage(format!("class {missing} has no members")));
        }
        if let Some(pos) = vectors.iter().position(|x| !x.is_finite()) {
            return Err(usage(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            vectors: vectors.as_standard_layout().into_owned(),
            labels,
            class_count,
        })
    }

    /// Builds a set from row slices, inferring `class_count` as `max(label) + 1`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(usage("rows have differing lengths"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let vectors = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| usage(e.to_string()))?;
        let c = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(vectors, labels, c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Row `i` as a contiguous slice.
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for &y in &self.labels {
            sizes[y] += 1;
        }
        sizes
    }

    /// Rows at `indices`, in that order. The result keeps `class_count`, so
    /// it fails if some class ends up empty.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(usage(format!("index {bad} out of range for {} rows", self.len())));
        }
        let vectors = self.vectors.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(vectors, labels, self.class_count)
    }

    /// Same labels, different vectors (for example the output of a model).
    pub fn with_vectors(&self, vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() != self.len() {
            return Err(usage(format!(
                "replacement has {} rows, expected {}",
                vectors.nrows(),
                self.len()
            )));
        }
        Self::new(vectors, self.labels.clone(), self.class_count)
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<usize>, usize) {
        (self.vectors, self.labels, self.class_count)
    }
}

/// The four extreme-distance pairings plus the per-anchor random mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtremePolicy {
    /// Easiest positive, easiest negative.
    Epen,
    /// Easiest positive, hardest negative.
    Ephn,
    /// Hardest positive, easiest negative.
    Hpen,
    /// Hardest positive, hardest negative (batch hard).
    Hphn,
    Assorted,
}

impl ExtremePolicy {
    pub const EXTREMES: [ExtremePolicy; 4] = [
        ExtremePolicy::Epen,
        ExtremePolicy::Ephn,
        ExtremePolicy::Hpen,
        ExtremePolicy::Hphn,
    ];

    pub const ALL: [ExtremePolicy; 5] = [
        ExtremePolicy::Epen,
        ExtremePolicy::Ephn,
        ExtremePolicy::Hpen,
        ExtremePolicy::Hphn,
        ExtremePolicy::Assorted,
    ];

    /// `(positive, negative)` extremes; `None` for [`ExtremePolicy::Assorted`].
    pub fn extremes(self) -> Option<(PositiveChoice, NegativeChoice)> {
        use NegativeChoice as N;
        use PositiveChoice as P;
        match self {
            ExtremePolicy::Epen => Some((P::Easiest, N::Easiest)),
            ExtremePolicy::Ephn => Some((P::Easiest, N::Hardest)),
            ExtremePolicy::Hpen => Some((P::Hardest, N::Easiest)),
            ExtremePolicy::Hphn => Some((P::Hardest, N::Hardest)),
            ExtremePolicy::Assorted => None,
        }
    }

    pub fn from_extremes(pos: PositiveChoice, neg: NegativeChoice) -> Self {
        match (pos, neg) {
            (PositiveChoice::Easiest, NegativeChoice::Easiest) => ExtremePolicy::Epen,
            (PositiveChoice::Easiest, NegativeChoice::Hardest) => ExtremePolicy::Ephn,
            (PositiveChoice::Hardest, NegativeChoice::Easiest) => ExtremePolicy::Hpen,
            (PositiveChoice::Hardest, NegativeChoice::Hardest) => ExtremePolicy::Hphn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExtremePolicy::Epen => "EPEN",
            ExtremePolicy::Ephn => "EPHN",
            ExtremePolicy::Hpen => "HPEN",
            ExtremePolicy::Hphn => "HPHN",
            ExtremePolicy::Assorted => "ASSORTED",
        }
    }
}

impl fmt::Display for ExtremePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExtremePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EPEN" => Ok(ExtremePolicy::Epen),
            "EPHN" => Ok(ExtremePolicy::Ephn),
            "HPEN" => Ok(ExtremePolicy::Hpen),
            "HPHN" => Ok(ExtremePolicy::Hphn),
            "ASSORTED" => Ok(ExtremePolicy::Assorted),
            other => Err(usage(format!("unknown policy `{other}`"))),
        }
    }
}

/// Which same-class candidate to take: nearest (easiest) or farthest (hardest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositiveChoice {
    Easiest,
    Hardest,
}

/// Which other-class candidate to take: farthest (easiest) or nearest (hardest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeChoice {
    Easiest,
    Hardest,
}

/// An (anchor, positive, negative) index triple and the extreme case that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub policy: ExtremePolicy,
}

impl Triplet {
    /// Checks the label invariants against `labels`.
    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        for (role, idx) in [
            ("anchor", self.anchor),
            ("positive", self.positive),
            ("negative", self.negative),
        ] {
            if idx >= n {
                return Err(usage(format!("{role} index {idx} out of range for {n} rows")));
            }
        }
        if self.anchor == self.positive {
            return Err(usage(format!("anchor {} is its own positive", self.anchor)));
        }
        if labels[self.anchor] != labels[self.positive] {
            return Err(usage(format!(
                "positive {} has label {}, anchor {} has label {}",
                self.positive, labels[self.positive], self.anchor, labels[self.anchor]
            )));
        }
        if labels[self.anchor] == labels[self.negative] {
            return Err(usage(format!(
                "negative {} shares label {} with anchor {}",
                self.negative, labels[self.negative], self.anchor
            )));
        }
        Ok(())
    }
}

/// Mini-batch geometry: `batch_size` rows with `per_class` rows per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub per_class: usize,
}

impl BatchSpec {
    /// Online batch for `class_count` classes: `per_class = floor(batch_size / class_count)`.
    pub fn online(batch_size: usize, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(usage("class_count must be positive"));
        }
        let per_class = batch_size / class_count;
        if per_class == 0 {
            return Err(usage(format!(
                "batch size {batch_size} is smaller than the class count {class_count}"
            )));
        }
        Ok(Self {
            batch_size,
            per_class,
        })
    }

    /// Offline batch of `triplets` triplets (three rows each).
    pub fn offline(triplets: usize) -> Self {
        Self {
            batch_size: 3 * triplets,
            per_class: 0,
        }
    }
}
