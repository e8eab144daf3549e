use serde::{Deserialize, Serialize};

use super::binning::BinningScheme;
use crate::error::{Error, Result};
use crate::model::{Feature, FeatureValues, MatchedDataset};

/// Histogram binning: each grid cell maps to its empirical precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBinningModel {
    pub features: Vec<Feature>,
    pub scheme: BinningScheme,
    /// Calibrated probability per flat cell index.
    pub theta: Vec<f64>,
    /// Global positive rate, used for empty cells.
    pub fallback: f64,
    #[serde(default)]
    pub smoothing: bool,
}

/// Fits per-cell precision. With `smoothing`, each cell estimate becomes
/// `(positives + 1) / (count + 2)`.
pub fn fit_histogram(
    ds: &MatchedDataset,
    features: &[Feature],
    scheme: &BinningScheme,
    smoothing: bool,
) -> Result<HistogramBinningModel> {
    scheme.check_features(features)?;
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let cells = scheme.total_bins();
    let mut n = vec![0usize; cells];
    let mut pos = vec![0usize; cells];
    for (i, s) in ds.samples.iter().enumerate() {
        let c = scheme.cell_of(features, &ds.features(i));
        n[c] += 1;
        pos[c] += usize::from(s.matched);
    }
    let total_pos: usize = pos.iter().sum();
    let fallback = total_pos as f64 / ds.len() as f64;
    let theta = n
        .iter()
        .zip(&pos)
        .map(|(&n, &p)| match (n, smoothing) {
            (0, _) => fallback,
            (_, true) => (p as f64 + 1.0) / (n as f64 + 2.0),
            (_, false) => p as f64 / n as f64,
        })
        .collect();
    Ok(HistogramBinningModel { features: features.to_vec(), scheme: scheme.clone(), theta, fallback, smoothing })
}

impl HistogramBinningModel {
    /// Looks up the cell of `values`; out-of-range features are clamped.
    pub fn transform(&self, values: &FeatureValues) -> f64 {
        self.theta[self.scheme.cell_of(&self.features, values)]
    }

    pub fn transform_dataset(&self, ds: &MatchedDataset) -> Vec<f64> {
        (0..ds.len()).map(|i| self.transform(&ds.features(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, CalibrationSample};

    fn ds(pairs: &[(f64, bool)]) -> MatchedDataset {
        let b = BoundingBox::new(0.5, 0.5, 0.1, 0.1).unwrap();
        MatchedDataset::new(
            pairs
                .iter()
                .map(|&(c, m)| CalibrationSample {
                    confidence: c,
                    label: 0,
                    bbox: b,
                    matched: m,
                    variances: None,
                    gt_box: m.then_some(b),
                })
                .collect(),
            0.5,
            None,
        )
    }

    #[test]
    fn cell_ratio_and_fallback() {
        let d = ds(&[(0.81, true), (0.82, true), (0.83, true), (0.84, false), (0.1, false)]);
        let m = fit_histogram(&d, &[Feature::Confidence], &BinningScheme::uniform(1, 10, 0), false).unwrap();
        assert_eq!(m.transform(&[0.85, 0.0, 0.0, 0.0, 0.0]), 0.75);
        assert_eq!(m.transform(&[0.55, 0.0, 0.0, 0.0, 0.0]), 0.6);
        assert_eq!(m.fallback, 0.6);
    }

    #[test]
    fn single_bin_is_global_precision() {
        let d = ds(&[(0.2, true), (0.7, false), (0.9, true), (0.4, false)]);
        let m = fit_histogram(&d, &[Feature::Confidence], &BinningScheme::uniform(1, 1, 0), false).unwrap();
        assert_eq!(m.theta, vec![0.5]);
    }

    #[test]
    fn smoothing_flag() {
        let d = ds(&[(0.9, true)]);
        let m = fit_histogram(&d, &[Feature::Confidence], &BinningScheme::uniform(1, 1, 0), true).unwrap();
        assert!((m.theta[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn clamps_out_of_range() {
        let d = ds(&[(0.95, true), (0.05, false)]);
        let m = fit_histogram(&d, &[Feature::Confidence], &BinningScheme::uniform(1, 2, 0), false).unwrap();
        assert_eq!(m.transform(&[1.7, 0.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(m.transform(&[-3.0, 0.0, 0.0, 0.0, 0.0]), 0.0);
    }
}
