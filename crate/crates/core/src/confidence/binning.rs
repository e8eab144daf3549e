use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{Feature, FeatureValues};

/// Equal-width grid over a feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    /// Bin count per dimension.
    pub bins: Vec<usize>,
    /// `[lo, hi]` per dimension.
    pub ranges: Vec<(f64, f64)>,
    /// Cells with fewer samples are ignored by density-filtered metrics.
    pub min_samples_per_bin: usize,
}

/// Default bin count for confidence-only binning.
pub const DEFAULT_BINS_1D: usize = 20;
/// Default bins per dimension for multivariate binning.
pub const DEFAULT_BINS_MULTI: usize = 5;
/// Default density filter for multivariate binning.
pub const DEFAULT_MIN_SAMPLES: usize = 8;

impl BinningScheme {
    /// Same bin count in every dimension, ranges `[0, 1]`.
    pub fn uniform(dims: usize, bins: usize, min_samples_per_bin: usize) -> Self {
        Self { bins: vec![bins; dims], ranges: vec![(0.0, 1.0); dims], min_samples_per_bin }
    }

    /// 20 bins for a single feature, otherwise 5 per dimension with the
    /// 8-sample density filter.
    pub fn default_for(dims: usize) -> Self {
        if dims == 1 {
            Self::uniform(1, DEFAULT_BINS_1D, 0)
        } else {
            Self::uniform(dims, DEFAULT_BINS_MULTI, DEFAULT_MIN_SAMPLES)
        }
    }

    pub fn dims(&self) -> usize {
        self.bins.len()
    }

    pub fn total_bins(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() || self.bins.len() != self.ranges.len() {
            return invalid("binning scheme needs one bin count and one range per dimension");
        }
        if self.bins.iter().any(|&b| b == 0) {
            return invalid("bin counts must be at least 1");
        }
        for &(lo, hi) in &self.ranges {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return invalid(format!("invalid bin range [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    pub fn check_features(&self, features: &[Feature]) -> Result<()> {
        self.validate()?;
        if features.len() != self.dims() {
            return invalid(format!(
                "{} features given for a {}-dimensional binning scheme",
                features.len(),
                self.dims()
            ));
        }
        Ok(())
    }

    /// Bin of `x` in dimension `d`. Bins are half-open `[lo, hi)` except the
    /// last; values outside the range are clamped into the grid.
    pub fn bin_of(&self, d: usize, x: f64) -> usize {
        let n = self.bins[d];
        let (lo, hi) = self.ranges[d];
        let t = (x - lo) / (hi - lo) * n as f64;
        if !(t > 0.0) {
            0
        } else {
            (t.floor() as usize).min(n - 1)
        }
    }

    /// Row-major flat cell index for a feature vector.
    pub fn cell_of(&self, features: &[Feature], values: &FeatureValues) -> usize {
        let mut idx = 0;
        for (d, f) in features.iter().enumerate() {
            idx = idx * self.bins[d] + self.bin_of(d, values[f.index()]);
        }
        idx
    }

    /// Per-dimension bin indices of a flat cell index.
    pub fn unflatten(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims()];
        for d in (0..self.dims()).rev() {
            out[d] = cell % self.bins[d];
            cell /= self.bins[d];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_half_open_last_closed() {
        let s = BinningScheme::uniform(1, 4, 0);
        assert_eq!(s.bin_of(0, 0.0), 0);
        assert_eq!(s.bin_of(0, 0.25), 1);
        assert_eq!(s.bin_of(0, 0.2499), 0);
        assert_eq!(s.bin_of(0, 1.0), 3);
        assert_eq!(s.bin_of(0, 7.0), 3);
        assert_eq!(s.bin_of(0, -1.0), 0);
    }

    #[test]
    fn flat_index_roundtrip() {
        let s = BinningScheme { bins: vec![3, 4, 2], ranges: vec![(0.0, 1.0); 3], min_samples_per_bin: 0 };
        for c in 0..s.total_bins() {
            let v = s.unflatten(c);
            let back = v.iter().zip(&s.bins).fold(0, |acc, (i, b)| acc * b + i);
            assert_eq!(back, c);
        }
    }
}
