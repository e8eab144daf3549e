//! Calibration and detection-performance metrics for confidence scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::binning::{BinningScheme, DEFAULT_BINS_1D};
use crate::error::{Error, Result};
use crate::model::{Feature, MatchedDataset};

pub const NLL_EPS: f64 = 1e-7;

/// Aggregates of one populated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub bin_index: usize,
    pub bin_coords: Vec<usize>,
    pub count: usize,
    pub mean_conf: f64,
    pub precision: f64,
    /// Mean normalized `(cx, cy, w, h)`.
    pub mean_box: [f64; 4],
}

#[derive(Default, Clone)]
struct Acc {
    n: usize,
    conf: f64,
    pos: f64,
    feat: [f64; 4],
}

/// One record per populated cell, ordered by flat cell index.
pub fn reliability(ds: &MatchedDataset, features: &[Feature], scheme: &BinningScheme) -> Result<Vec<ReliabilityBin>> {
    scheme.check_features(features)?;
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut cells: BTreeMap<usize, Acc> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let v = ds.features(i);
        let a = cells.entry(scheme.cell_of(features, &v)).or_default();
        a.n += 1;
        a.conf += s.confidence;
        a.pos += s.target();
        for k in 0..4 {
            a.feat[k] += v[k + 1];
        }
    }
    Ok(cells
        .into_iter()
        .map(|(idx, a)| {
            let n = a.n as f64;
            ReliabilityBin {
                bin_index: idx,
                bin_coords: scheme.unflatten(idx),
                count: a.n,
                mean_conf: a.conf / n,
                precision: a.pos / n,
                mean_box: [a.feat[0] / n, a.feat[1] / n, a.feat[2] / n, a.feat[3] / n],
            }
        })
        .collect())
}

/// Weighted gap over records holding at least `min_samples` samples, with
/// weights renormalized over the surviving records.
pub fn dece_from_reliability(records: &[ReliabilityBin], min_samples: usize) -> Result<f64> {
    let mut mass = 0usize;
    let mut sum = 0.0;
    for r in records.iter().filter(|r| r.count >= min_samples && r.count > 0) {
        mass += r.count;
        sum += r.count as f64 * (r.precision - r.mean_conf).abs();
    }
    if mass == 0 {
        return Err(Error::InsufficientDensity { min_samples });
    }
    Ok(sum / mass as f64)
}

/// Detection expected calibration error over a joint feature grid.
pub fn dece(ds: &MatchedDataset, features: &[Feature], scheme: &BinningScheme) -> Result<f64> {
    let recs = reliability(ds, features, scheme)?;
    dece_from_reliability(&recs, scheme.min_samples_per_bin)
}

/// Expected calibration error over equal-width confidence bins.
pub fn ece(ds: &MatchedDataset, bins: usize) -> Result<f64> {
    dece(ds, &[Feature::Confidence], &BinningScheme::uniform(1, bins, 0))
}

pub fn ece_default(ds: &MatchedDataset) -> Result<f64> {
    ece(ds, DEFAULT_BINS_1D)
}

/// Maximum calibration gap over populated confidence bins.
pub fn mce(ds: &MatchedDataset, bins: usize) -> Result<f64> {
    let recs = reliability(ds, &[Feature::Confidence], &BinningScheme::uniform(1, bins, 0))?;
    Ok(recs.iter().map(|r| (r.precision - r.mean_conf).abs()).fold(0.0, f64::max))
}

pub fn brier(ds: &MatchedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let s: f64 = ds.samples.iter().map(|s| (s.confidence - s.target()).powi(2)).sum();
    Ok(s / ds.len() as f64)
}

/// Mean Bernoulli negative log-likelihood with clamped probabilities.
pub fn nll_bernoulli(ds: &MatchedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let s: f64 = ds
        .samples
        .iter()
        .map(|s| {
            let p = s.confidence.clamp(NLL_EPS, 1.0 - NLL_EPS);
            if s.matched {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(s / ds.len() as f64)
}

/// Area under the precision-recall curve.
///
/// Thresholds sweep the distinct confidences from high to low; tied scores
/// enter together. The curve starts at recall 0 with the precision of the
/// first threshold and is integrated with the trapezoid rule.
pub fn auprc(ds: &MatchedDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let total_pos = ds.samples.iter().filter(|s| s.matched).count();
    if total_pos == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.samples[b].confidence.total_cmp(&ds.samples[a].confidence));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let c = ds.samples[order[i]].confidence;
        while i < order.len() && ds.samples[order[i]].confidence == c {
            if ds.samples[order[i]].matched {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * 0.5 * (precision + p0);
        prev = Some((recall, precision));
    }
    Ok(area)
}

pub const RELIABILITY_CSV_HEADER: &str = "bin_index,count,mean_conf,precision,mean_cx,mean_cy,mean_w,mean_h";

pub fn reliability_csv(records: &[ReliabilityBin]) -> String {
    let mut s = String::from(RELIABILITY_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.bin_index, r.count, r.mean_conf, r.precision, r.mean_box[0], r.mean_box[1], r.mean_box[2], r.mean_box[3]
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, CalibrationSample};

    pub(crate) fn ds(pairs: &[(f64, bool)]) -> MatchedDataset {
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
    fn ece_examples() {
        assert_eq!(ece(&ds(&[(1.0, true), (1.0, true)]), 20).unwrap(), 0.0);
        let v = ece(&ds(&[(0.6, true), (0.8, false)]), 1).unwrap();
        assert!((v - 0.2).abs() < 1e-12);
        assert!(matches!(ece(&ds(&[]), 20), Err(Error::NoSamples)));
    }

    #[test]
    fn dece_single_cell() {
        let d = ds(&[(0.9, true), (0.9, false)]);
        let s = BinningScheme::uniform(5, 5, 0);
        let v = dece(&d, &Feature::ALL, &s).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dece_all_filtered() {
        let d = ds(&[(0.9, true), (0.9, false)]);
        let s = BinningScheme::uniform(5, 5, 8);
        assert!(matches!(dece(&d, &Feature::ALL, &s), Err(Error::InsufficientDensity { .. })));
    }

    #[test]
    fn dece_filter_renormalizes() {
        let mut pairs = vec![(0.15, true); 8];
        pairs.extend(vec![(0.15, false); 8]);
        pairs.push((0.95, false));
        let d = ds(&pairs);
        let s = BinningScheme { bins: vec![10], ranges: vec![(0.0, 1.0)], min_samples_per_bin: 8 };
        let v = dece(&d, &[Feature::Confidence], &s).unwrap();
        assert!((v - 0.35).abs() < 1e-12);
    }

    #[test]
    fn mce_single_bin_and_dominance() {
        let d = ds(&[(0.6, true), (0.8, false)]);
        assert!((mce(&d, 1).unwrap() - 0.2).abs() < 1e-12);
        let d = ds(&[(0.1, true), (0.55, false), (0.6, true), (0.92, true)]);
        assert!(mce(&d, 10).unwrap() >= ece(&d, 10).unwrap());
    }

    #[test]
    fn brier_and_nll() {
        assert_eq!(brier(&ds(&[(0.5, true)])).unwrap(), 0.25);
        assert!((brier(&ds(&[(0.8, false)])).unwrap() - 0.64).abs() < 1e-12);
        assert!((nll_bernoulli(&ds(&[(0.5, false)])).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(nll_bernoulli(&ds(&[(0.0, true)])).unwrap().is_finite());
    }

    #[test]
    fn auprc_trivial_cases() {
        assert_eq!(auprc(&ds(&[(0.3, true), (0.9, true)])).unwrap(), 1.0);
        assert_eq!(auprc(&ds(&[(0.9, true), (0.8, true), (0.2, false)])).unwrap(), 1.0);
    }

    #[test]
    fn reliability_csv_header() {
        let d = ds(&[(0.6, true), (0.8, false)]);
        let recs = reliability(&d, &[Feature::Confidence], &BinningScheme::uniform(1, 20, 0)).unwrap();
        let csv = reliability_csv(&recs);
        assert!(csv.starts_with(RELIABILITY_CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }
}
