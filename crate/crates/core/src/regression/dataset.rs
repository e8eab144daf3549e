use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::MatchedDataset;

/// Matched detections as Gaussian predictions: per sample a mean vector, a
/// diagonal variance vector and the ground-truth vector, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub dims: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gt: Vec<f64>,
}

impl RegressionDataset {
    pub fn new(dims: usize, mean: Vec<f64>, var: Vec<f64>, gt: Vec<f64>) -> Result<Self> {
        if dims == 0 {
            return invalid("regression dataset needs at least one dimension");
        }
        if mean.len() % dims != 0 || mean.len() != var.len() || mean.len() != gt.len() {
            return invalid("mean, variance and ground-truth arrays must have equal length N * dims");
        }
        if var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return invalid("variances must be positive and finite");
        }
        if mean.iter().chain(&gt).any(|v| !v.is_finite()) {
            return invalid("means and ground truth must be finite");
        }
        Ok(Self { dims, mean, var, gt })
    }

    /// Matched samples that carry variances; unmatched detections are dropped.
    pub fn from_matched(ds: &MatchedDataset) -> Result<Self> {
        let (mut mean, mut var, mut gt) = (Vec::new(), Vec::new(), Vec::new());
        for s in &ds.samples {
            if let (true, Some(v), Some(g)) = (s.matched, s.variances, s.gt_box) {
                mean.extend(s.bbox.to_array());
                var.extend(v);
                gt.extend(g.to_array());
            }
        }
        if mean.is_empty() {
            return Err(Error::NoSamples);
        }
        Self::new(4, mean, var, gt)
    }

    pub fn len(&self) -> usize {
        self.mean.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_of(&self, n: usize) -> &[f64] {
        &self.mean[n * self.dims..(n + 1) * self.dims]
    }

    pub fn var_of(&self, n: usize) -> &[f64] {
        &self.var[n * self.dims..(n + 1) * self.dims]
    }

    pub fn gt_of(&self, n: usize) -> &[f64] {
        &self.gt[n * self.dims..(n + 1) * self.dims]
    }

    /// Column `d` as `(mean, variance, ground truth)`.
    pub fn column(&self, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.len();
        let pick = |v: &Vec<f64>| (0..n).map(|i| v[i * self.dims + d]).collect::<Vec<_>>();
        (pick(&self.mean), pick(&self.var), pick(&self.gt))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self { dims: self.dims, mean: Vec::new(), var: Vec::new(), gt: Vec::new() };
        for &i in idx {
            out.mean.extend_from_slice(self.mean_of(i));
            out.var.extend_from_slice(self.var_of(i));
            out.gt.extend_from_slice(self.gt_of(i));
        }
        out
    }

    /// Same samples with variances multiplied per dimension by `scale^2`.
    pub fn with_scaled_std(&self, scale: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, v) in out.var.iter_mut().enumerate() {
            *v *= scale[i % self.dims].powi(2);
        }
        out
    }
}
