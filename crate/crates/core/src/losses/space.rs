//! Working coordinates for a loss: either the raw embeddings or their
//! projections onto the unit sphere, with the matching backward pass.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};

use crate::error::{usage, Result};
use crate::metric::{norm, squared_l2, Metric, MetricKind};

pub(crate) struct Space {
    pub z: Array2<f64>,
    /// Row norms of the raw embeddings when normalized.
    norms: Option<Vec<f64>>,
    pub kind: MetricKind,
}

impl Space {
    pub fn new(embeddings: &Array2<f64>, metric: Metric) -> Result<Self> {
        let mut z = embeddings.as_standard_layout().into_owned();
        let norms = if metric.normalize_inputs {
            let mut norms = Vec::with_capacity(z.nrows());
            for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
                let r = norm(row.as_slice().expect("standard layout"));
                if r == 0.0 {
                    return Err(usage(format!(
                        "embedding {i} has zero norm and cannot be normalized"
                    )));
                }
                row.mapv_inplace(|x| x / r);
                norms.push(r);
            }
            Some(norms)
        } else {
            None
        };
        Ok(Self {
            z,
            norms,
            kind: metric.kind,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.z.ncols();
        &self.z.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.dist_to(a, self.row(b))
    }

    pub fn dist_to(&self, a: usize, point: &[f64]) -> f64 {
        let sq = squared_l2(self.row(a), point);
        match self.kind {
            MetricKind::SquaredEuclidean => sq,
            MetricKind::Euclidean => sq.sqrt(),
        }
    }

    pub fn dot(&self, a: usize, b: usize) -> f64 {
        self.row(a).iter().zip(self.row(b)).map(|(x, y)| x * y).sum()
    }

    /// `coef * dD(z_a, p)/dz_a`, written into `out`.
    fn dist_grad_into(&self, a: usize, point: &[f64], coef: f64, mut out: ArrayViewMut1<f64>) {
        let za = self.row(a);
        let scale = match self.kind {
            MetricKind::SquaredEuclidean => 2.0 * coef,
            MetricKind::Euclidean => {
                let d = squared_l2(za, point).sqrt();
                if d == 0.0 {
                    return;
                }
                coef / d
            }
        };
        for ((o, x), y) in out.iter_mut().zip(za).zip(point) {
            *o += scale * (x - y);
        }
    }

    /// Accumulates `coef * dD(z_a, z_b)` into rows `a` and `b` of `gz`.
    pub fn add_dist_grad(&self, gz: &mut Array2<f64>, a: usize, b: usize, coef: f64) {
        if coef == 0.0 || a == b {
            return;
        }
        let zb = self.row(b).to_vec();
        let mut ga = vec![0.0; zb.len()];
        self.dist_grad_into(a, &zb, coef, ArrayViewMut1::from(ga.as_mut_slice()));
        for (k, g) in ga.iter().enumerate() {
            gz[[a, k]] += g;
            gz[[b, k]] -= g;
        }
    }

    /// Accumulates `coef * dD(z_a, point)/dz_a` into row `a` only.
    pub fn add_dist_grad_to_point(&self, gz: &mut Array2<f64>, a: usize, point: &[f64], coef: f64) {
        if coef == 0.0 {
            return;
        }
        self.dist_grad_into(a, point, coef, gz.row_mut(a));
    }

    /// Accumulates `coef * d(z_a . z_b)` into rows `a` and `b`.
    pub fn add_dot_grad(&self, gz: &mut Array2<f64>, a: usize, b: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let d = self.z.ncols();
        for k in 0..d {
            let (za, zb) = (self.z[[a, k]], self.z[[b, k]]);
            gz[[a, k]] += coef * zb;
            gz[[b, k]] += coef * za;
        }
    }

    /// Maps a gradient with respect to the working coordinates back to the
    /// raw embeddings: `g_y = (g_z - z (z . g_z)) / |y|` when normalized.
    pub fn backprop(&self, mut gz: Array2<f64>) -> Array2<f64> {
        if let Some(norms) = &self.norms {
            for (i, mut g) in gz.axis_iter_mut(Axis(0)).enumerate() {
                let z: ArrayView1<f64> = self.z.row(i);
                let proj = z.dot(&g);
                g.zip_mut_with(&z, |gk, zk| *gk = (*gk - zk * proj) / norms[i]);
            }
        }
        gz
    }
}
