//! Synthetic labelled data and the three-way split into pretraining,
//! mining and test parts.

use ndarray::Array2;

use crate::error::{usage, Result};
use crate::rng::Rng;
use crate::types::EmbeddingSet;

pub const DEFAULT_CLASSES: usize = 9;
pub const DEFAULT_PER_CLASS: usize = 200;
pub const DEFAULT_INPUT_DIM: usize = 32;
/// Places the default nine classes at a raw 1-NN accuracy of about 0.85.
pub const DEFAULT_SEPARATION: f64 = 7.5;
/// How many of the default classes get the wide spread, and its factor.
pub const DEFAULT_WIDE_CLASSES: usize = 2;
pub const DEFAULT_WIDE_FACTOR: f64 = 3.0;

/// Isotropic Gaussian classes: class k draws `per_class` points from
/// `N(means[k], sigmas[k]^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub per_class: usize,
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl SynthSpec {
    /// `classes` means at distance `separation` from the origin along
    /// random orthonormal directions (random unit directions when there
    /// are more classes than dimensions), unit sigma, and the last
    /// [`DEFAULT_WIDE_CLASSES`] classes widened by [`DEFAULT_WIDE_FACTOR`].
    pub fn with_separation(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(usage(format!("need at least 2 classes and 1 dimension, got {classes} and {dim}")));
        }
        if !(separation.is_finite() && separation >= 0.0) {
            return Err(usage(format!("separation must be finite and non-negative, got {separation}")));
        }
        let mut rng = Rng::stream(seed, 0);
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
        while dirs.len() < classes {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            if classes <= dim {
                // Gram-Schmidt against the directions drawn so far.
                for u in &dirs {
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                dirs.push(v);
            }
        }
        let means = dirs
            .into_iter()
            .map(|v| v.into_iter().map(|x| x * separation).collect())
            .collect();
        let wide = DEFAULT_WIDE_CLASSES.min(classes - 1);
        let sigmas = (0..classes)
            .map(|k| if k >= classes - wide { DEFAULT_WIDE_FACTOR } else { 1.0 })
            .collect();
        let spec = Self { per_class, means, sigmas, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.class_count();
        if c < 2 {
            return Err(usage("synthetic data needs at least 2 classes"));
        }
        if self.sigmas.len() != c {
            return Err(usage(format!("{} sigmas for {c} classes", self.sigmas.len())));
        }
        if self.per_class < 2 {
            return Err(usage(format!("per-class count must be at least 2, got {}", self.per_class)));
        }
        let d = self.dim();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(usage("class means must share one positive dimension"));
        }
        if self.means.iter().flatten().any(|x| !x.is_finite()) {
            return Err(usage("class means must be finite"));
        }
        if let Some((k, s)) = self.sigmas.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s > 0.0)) {
            return Err(usage(format!("sigma of class {k} must be positive and finite, got {s}")));
        }
        Ok(())
    }
}

/// Draws the dataset described by `spec`. Rows are grouped by class.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<EmbeddingSet> {
    spec.validate()?;
    let (c, d, w) = (spec.class_count(), spec.dim(), spec.per_class);
    let mut rng = Rng::stream(spec.seed, 1);
    let mut values = Vec::with_capacity(c * w * d);
    let mut labels = Vec::with_capacity(c * w);
    for (k, (mean, &sigma)) in spec.means.iter().zip(&spec.sigmas).enumerate() {
        for _ in 0..w {
            values.extend(mean.iter().map(|m| m + sigma * rng.normal()));
            labels.push(k);
        }
    }
    let vectors = Array2::from_shape_vec((c * w, d), values).expect("shape");
    EmbeddingSet::new(vectors, labels, c)
}

/// Rows of `sets` stacked in order. The class count is the largest of the
/// inputs' class counts.
pub fn concat(sets: &[&EmbeddingSet]) -> Result<EmbeddingSet> {
    let first = sets.first().ok_or_else(|| usage("nothing to concatenate"))?;
    if let Some(s) = sets.iter().find(|s| s.dim() != first.dim()) {
        return Err(usage(format!("cannot stack dimension {} onto {}", s.dim(), first.dim())));
    }
    let views: Vec<_> = sets.iter().map(|s| s.vectors().view()).collect();
    let vectors = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths");
    let labels = sets.iter().flat_map(|s| s.labels().iter().copied()).collect();
    let c = sets.iter().map(|s| s.class_count()).max().unwrap_or(0);
    EmbeddingSet::new(vectors, labels, c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    /// Fractions for the pretraining, mining and test parts.
    pub fractions: [f64; 3],
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.70, 0.15, 0.15],
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(usage(format!("split fractions must lie in (0, 1), got {:?}", self.fractions)));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(usage(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// The three parts of a split and the original row indices of each part,
/// ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub parts: [EmbeddingSet; 3],
    pub indices: [Vec<usize>; 3],
}

/// Sizes of the first two parts for `n` items; the rest goes to the third.
fn part_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let a = (fractions[0] * n as f64).round() as usize;
    let b = ((fractions[1] * n as f64).round() as usize).min(n - a.min(n));
    let a = a.min(n);
    [a, b, n - a - b]
}

/// Disjoint, exhaustive three-way split of `set`.
///
/// Stratified splits shuffle each class separately and cut it by the
/// fractions, so every class keeps its proportions within one sample.
/// Every part must keep at least two members of every class.
pub fn split(set: &EmbeddingSet, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, 2);
    let mut indices: [Vec<usize>; 3] = Default::default();
    let mut cut = |mut items: Vec<usize>, rng: &mut Rng| {
        rng.shuffle(&mut items);
        let sizes = part_sizes(items.len(), spec.fractions);
        let mut rest = items.as_slice();
        for (part, size) in indices.iter_mut().zip(sizes) {
            let (head, tail) = rest.split_at(size);
            part.extend_from_slice(head);
            rest = tail;
        }
    };
    if spec.stratified {
        let mut by_class = vec![Vec::new(); set.class_count()];
        for (i, &y) in set.labels().iter().enumerate() {
            by_class[y].push(i);
        }
        for members in by_class {
            cut(members, &mut rng);
        }
    } else {
        cut((0..set.len()).collect(), &mut rng);
    }
    for part in &mut indices {
        part.sort_unstable();
    }
    for (p, part) in indices.iter().enumerate() {
        let mut counts = vec![0usize; set.class_count()];
        for &i in part {
            counts[set.label(i)] += 1;
        }
        if let Some(k) = counts.iter().position(|&n| n < 2) {
            return Err(usage(format!(
                "class {k} has {} member(s) in split part {}; every part needs at least 2",
                counts[k],
                p + 1
            )));
        }
    }
    let parts = [
        set.subset(&indices[0])?,
        set.subset(&indices[1])?,
        set.subset(&indices[2])?,
    ];
    Ok(Split { parts, indices })
}
