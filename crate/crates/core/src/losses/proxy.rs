use ndarray::Array2;

use super::space::Space;
use super::Batch;
use crate::error::{usage, Result};
use crate::metric::squared_l2;

/// One proxy per class, maintained as a momentum-blended running mean of the
/// class's batch means. Proxies live in the loss's working coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyState {
    proxies: Array2<f64>,
    initialized: Vec<bool>,
}

impl ProxyState {
    pub fn new(class_count: usize, dim: usize) -> Self {
        Self {
            proxies: Array2::zeros((class_count, dim)),
            initialized: vec![false; class_count],
        }
    }

    /// Sized from the batch's largest label.
    pub(super) fn for_batch(batch: &Batch) -> Self {
        let c = batch.labels().iter().max().map_or(0, |m| m + 1);
        Self::new(c, batch.dim())
    }

    /// Explicit proxies, all defined.
    pub fn from_proxies(proxies: Array2<f64>) -> Result<Self> {
        if proxies.iter().any(|x| !x.is_finite()) {
            return Err(usage("non-finite proxy"));
        }
        let c = proxies.nrows();
        Ok(Self {
            proxies: proxies.as_standard_layout().into_owned(),
            initialized: vec![true; c],
        })
    }

    pub fn proxies(&self) -> &Array2<f64> {
        &self.proxies
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.initialized.get(class).copied().unwrap_or(false)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.dim() != self.proxies.ncols() {
            return Err(usage(format!(
                "proxy dimension {} does not match embedding dimension {}",
                self.proxies.ncols(),
                batch.dim()
            )));
        }
        if let Some(&y) = batch.labels().iter().find(|&&y| y >= self.initialized.len()) {
            return Err(usage(format!(
                "label {y} has no proxy slot ({} classes)",
                self.initialized.len()
            )));
        }
        Ok(())
    }

    fn batch_means(batch: &Batch, space: &Space, classes: usize) -> (Array2<f64>, Vec<usize>) {
        let mut sums = Array2::zeros((classes, space.z.ncols()));
        let mut counts = vec![0usize; classes];
        for (i, &y) in batch.labels().iter().enumerate() {
            let mut row = sums.row_mut(y);
            row += &space.z.row(i);
            counts[y] += 1;
        }
        for (y, &n) in counts.iter().enumerate() {
            if n > 0 {
                sums.row_mut(y).mapv_inplace(|x| x / n as f64);
            }
        }
        (sums, counts)
    }

    pub(super) fn initialize_missing(&mut self, batch: &Batch, space: &Space) -> Result<()> {
        self.check_batch(batch)?;
        let (means, counts) = Self::batch_means(batch, space, self.initialized.len());
        for (y, &n) in counts.iter().enumerate() {
            if n > 0 && !self.initialized[y] {
                self.proxies.row_mut(y).assign(&means.row(y));
                self.initialized[y] = true;
            }
        }
        Ok(())
    }

    /// `proxy <- momentum * proxy + (1 - momentum) * batch_mean` for every
    /// class in the batch; undefined proxies take the batch mean.
    pub(super) fn blend_batch_means(&mut self, batch: &Batch, space: &Space, momentum: f64) -> Result<()> {
        self.check_batch(batch)?;
        let (means, counts) = Self::batch_means(batch, space, self.initialized.len());
        for (y, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            if self.initialized[y] {
                let mut row = self.proxies.row_mut(y);
                row.zip_mut_with(&means.row(y), |p, m| *p = momentum * *p + (1.0 - momentum) * m);
            } else {
                self.proxies.row_mut(y).assign(&means.row(y));
                self.initialized[y] = true;
            }
        }
        Ok(())
    }

    /// Class of the nearest defined proxy (squared distance, lowest class on ties).
    pub(super) fn nearest(&self, point: &[f64]) -> Result<usize> {
        let d = self.proxies.ncols();
        let flat = self.proxies.as_slice().expect("standard layout");
        let mut best: Option<(usize, f64)> = None;
        for (c, _) in self.initialized.iter().enumerate().filter(|(_, &ok)| ok) {
            let dist = squared_l2(point, &flat[c * d..(c + 1) * d]);
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((c, dist));
            }
        }
        best.map(|(c, _)| c)
            .ok_or_else(|| usage("no proxy has been defined yet"))
    }
}
