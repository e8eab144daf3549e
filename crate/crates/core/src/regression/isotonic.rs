use serde::{Deserialize, Serialize};

use super::dataset::RegressionDataset;
use super::distribution::{support, CalibratedDistribution, DEFAULT_SUPPORT};
use crate::error::{invalid, Result};
use crate::special::normal_cdf;

/// Monotone map on `[0, 1]` given by breakpoints; evaluated by linear
/// interpolation and clamped to the end values outside the fitted range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl IsotonicMap {
    pub fn eval(&self, v: f64) -> f64 {
        let (x, y) = (&self.x, &self.y);
        if v <= x[0] {
            return y[0];
        }
        if v >= x[x.len() - 1] {
            return y[y.len() - 1];
        }
        let i = x.partition_point(|&p| p <= v);
        let (x0, x1) = (x[i - 1], x[i]);
        if x1 <= x0 {
            return y[i];
        }
        y[i - 1] + (y[i] - y[i - 1]) * (v - x0) / (x1 - x0)
    }
}

/// One isotonic map per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub maps: Vec<IsotonicMap>,
}

/// Pool-adjacent-violators fit of `y` against `x` with unit weights.
/// Returns block representatives: mean `x` and pooled `y` per block, with
/// ties in `x` pooled first.
pub fn pav(x: &[f64], y: &[f64]) -> Result<IsotonicMap> {
    if x.len() != y.len() || x.is_empty() {
        return invalid("isotonic fit needs equally long, nonempty inputs");
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    // Blocks as (sum_x, sum_y, weight).
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    let mut last_x = f64::NAN;
    for &i in &idx {
        if x[i] == last_x {
            let b = blocks.last_mut().expect("tie follows a block");
            b.0 += x[i];
            b.1 += y[i];
            b.2 += 1.0;
        } else {
            blocks.push((x[i], y[i], 1.0));
            last_x = x[i];
        }
        while blocks.len() > 1 {
            let n = blocks.len();
            let (a, b) = (blocks[n - 2], blocks[n - 1]);
            if a.1 / a.2 <= b.1 / b.2 {
                break;
            }
            blocks[n - 2] = (a.0 + b.0, a.1 + b.1, a.2 + b.2);
            blocks.pop();
        }
    }
    Ok(IsotonicMap { x: blocks.iter().map(|b| b.0 / b.2).collect(), y: blocks.iter().map(|b| b.1 / b.2).collect() })
}

/// Probability integral transform of every sample in dimension `d`.
fn pit(ds: &RegressionDataset, d: usize) -> Vec<f64> {
    let (m, v, g) = ds.column(d);
    (0..m.len()).map(|i| normal_cdf(g[i], m[i], v[i].sqrt())).collect()
}

pub fn fit_isotonic(ds: &RegressionDataset) -> Result<IsotonicModel> {
    if ds.len() < 2 {
        return invalid("isotonic calibration needs at least two samples per dimension");
    }
    let mut maps = Vec::with_capacity(ds.dims);
    for d in 0..ds.dims {
        let f = pit(ds, d);
        let mut sorted = f.clone();
        sorted.sort_by(f64::total_cmp);
        let n = f.len() as f64;
        let target: Vec<f64> = f.iter().map(|&v| sorted.partition_point(|&s| s <= v) as f64 / n).collect();
        maps.push(pav(&f, &target)?);
    }
    Ok(IsotonicModel { maps })
}

impl IsotonicModel {
    /// Calibrated non-parametric distribution for one input Gaussian.
    pub fn transform(&self, dim: usize, mu: f64, var: f64, t: usize) -> Result<CalibratedDistribution> {
        let sigma = var.sqrt();
        let x = support(mu, sigma, t);
        let raw: Vec<f64> = x.iter().map(|&v| self.maps[dim].eval(normal_cdf(v, mu, sigma))).collect();
        CalibratedDistribution::from_cdf(x, raw)
    }

    pub fn transform_dataset(&self, ds: &RegressionDataset) -> Result<Vec<Vec<CalibratedDistribution>>> {
        (0..ds.dims)
            .map(|d| {
                let (m, v, _) = ds.column(d);
                m.iter().zip(&v).map(|(&m, &v)| self.transform(d, m, v, DEFAULT_SUPPORT)).collect()
            })
            .collect()
    }
}
