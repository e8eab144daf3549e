use serde::{Deserialize, Serialize};

use super::dataset::RegressionDataset;
use super::distribution::CalibratedDistribution;
use crate::error::{Error, Result};

/// One standard-deviation scale per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceScalingModel {
    pub scale: Vec<f64>,
}

/// Closed-form maximum-likelihood scale `sqrt(mean(z^2))` per dimension.
pub fn fit_variance_scaling(ds: &RegressionDataset) -> Result<VarianceScalingModel> {
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let n = ds.len() as f64;
    let mut acc = vec![0.0; ds.dims];
    for i in 0..ds.mean.len() {
        acc[i % ds.dims] += (ds.gt[i] - ds.mean[i]).powi(2) / ds.var[i];
    }
    let scale: Vec<f64> = acc.iter().map(|a| (a / n).sqrt()).collect();
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput("all residuals are zero; variance scale is undefined".into()));
    }
    Ok(VarianceScalingModel { scale })
}

impl VarianceScalingModel {
    pub fn transform(&self, dim: usize, mu: f64, var: f64) -> CalibratedDistribution {
        CalibratedDistribution::gaussian(mu, var * self.scale[dim].powi(2))
    }

    pub fn transform_dataset(&self, ds: &RegressionDataset) -> RegressionDataset {
        ds.with_scaled_std(&self.scale)
    }
}

/// Gaussian NLL of one dimension as a function of the scale, up to constants.
pub fn scaled_nll(ds: &RegressionDataset, dim: usize, w: f64) -> f64 {
    let (m, v, g) = ds.column(dim);
    let n = m.len() as f64;
    let s: f64 = (0..m.len()).map(|i| (g[i] - m[i]).powi(2) / v[i]).sum();
    n * w.ln() + s / (2.0 * w * w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residuals_twice_sigma_give_two() {
        let ds = RegressionDataset::new(1, vec![0.0, 0.0, 5.0], vec![1.0, 4.0, 9.0], vec![2.0, -4.0, 11.0]).unwrap();
        let m = fit_variance_scaling(&ds).unwrap();
        assert!((m.scale[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_is_stationary() {
        let ds = RegressionDataset::new(1, vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.5], vec![0.7, -0.4, 3.1]).unwrap();
        let w = fit_variance_scaling(&ds).unwrap().scale[0];
        let h = 1e-6;
        let g = (scaled_nll(&ds, 0, w + h) - scaled_nll(&ds, 0, w - h)) / (2.0 * h);
        assert!(g.abs() < 1e-6);
    }
}
