use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::RegressionDataset;
use super::distribution::CalibratedDistribution;
use crate::error::{invalid, Error, Result};
use crate::special::{chi2_quantile, LN_2PI};

/// Default bin count for UCE, ENCE and C-QCE.
pub const DEFAULT_BINS: usize = 20;

/// Quantile levels 0.05, 0.10, ..., 0.95.
pub fn tau_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Multivariate Gaussian prediction with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub gt: DVector<f64>,
}

impl GaussianPrediction {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, gt: DVector<f64>) -> Result<Self> {
        let l = mean.len();
        if cov.nrows() != l || cov.ncols() != l || gt.len() != l {
            return invalid("mean, covariance and ground truth dimensions differ");
        }
        Ok(Self { mean, cov, gt })
    }

    pub fn diagonal(mean: &[f64], var: &[f64], gt: &[f64]) -> Self {
        Self {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
            gt: DVector::from_column_slice(gt),
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.cov.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("prediction covariance".into()))
    }

    /// Squared Mahalanobis distance of the ground truth.
    pub fn nees(&self) -> Result<f64> {
        let r = &self.gt - &self.mean;
        let z = self
            .cholesky()?
            .l()
            .solve_lower_triangular(&r)
            .ok_or_else(|| Error::NotPositiveDefinite("prediction covariance".into()))?;
        Ok(z.norm_squared())
    }

    /// Negative log density of the ground truth.
    pub fn nll(&self) -> Result<f64> {
        let ch = self.cholesky()?;
        let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(0.5 * (self.dims() as f64 * LN_2PI + log_det + self.nees()?))
    }

    pub fn sgv(&self) -> Result<f64> {
        sgv(&self.cov)
    }
}

/// NEES of one prediction.
pub fn nees(pred: &GaussianPrediction) -> Result<f64> {
    pred.nees()
}

/// Standardized generalized variance `det(cov)^(1/L)`.
pub fn sgv(cov: &DMatrix<f64>) -> Result<f64> {
    let ch = cov.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))?;
    let l = cov.nrows() as f64;
    let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((log_det / l).exp())
}

/// Diagonal predictions for every sample of a dataset.
pub fn predictions(ds: &RegressionDataset) -> Vec<GaussianPrediction> {
    (0..ds.len()).map(|n| GaussianPrediction::diagonal(ds.mean_of(n), ds.var_of(n), ds.gt_of(n))).collect()
}

fn nonempty<T>(v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(Error::NoSamples)
    } else {
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return invalid(format!("quantile level {tau} outside (0, 1)"));
    }
    Ok(())
}

/// Marginal quantile calibration error at level `tau`.
pub fn m_qce(preds: &[GaussianPrediction], tau: f64) -> Result<f64> {
    nonempty(preds)?;
    check_tau(tau)?;
    let radius = chi2_quantile(preds[0].dims(), tau)?;
    let mut hits = 0usize;
    for p in preds {
        if p.nees()? <= radius {
            hits += 1;
        }
    }
    Ok((hits as f64 / preds.len() as f64 - tau).abs())
}

pub fn mean_m_qce(preds: &[GaussianPrediction]) -> Result<f64> {
    mean_over_grid(|t| m_qce(preds, t))
}

/// Conditional quantile calibration error over `bins` equal-width bins of
/// the square-root SGV on `[0, max]`.
pub fn c_qce(preds: &[GaussianPrediction], tau: f64, bins: usize) -> Result<f64> {
    nonempty(preds)?;
    check_tau(tau)?;
    let radius = chi2_quantile(preds[0].dims(), tau)?;
    let keys = preds.iter().map(|p| p.sgv().map(f64::sqrt)).collect::<Result<Vec<_>>>()?;
    let inside =
        preds.iter().map(|p| p.nees().map(|e| if e <= radius { 1.0 } else { 0.0 })).collect::<Result<Vec<_>>>()?;
    let groups = bin_by(&keys, bins)?;
    let n = preds.len() as f64;
    Ok(groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let freq = g.iter().map(|&i| inside[i]).sum::<f64>() / g.len() as f64;
            g.len() as f64 / n * (freq - tau).abs()
        })
        .sum())
}

pub fn mean_c_qce(preds: &[GaussianPrediction], bins: usize) -> Result<f64> {
    mean_over_grid(|t| c_qce(preds, t, bins))
}

/// Mean negative log density under full-covariance Gaussians.
pub fn nll_gaussian_full(preds: &[GaussianPrediction]) -> Result<f64> {
    nonempty(preds)?;
    let mut s = 0.0;
    for p in preds {
        s += p.nll()?;
    }
    Ok(s / preds.len() as f64)
}

/// Mean univariate Gaussian NLL summed over dimensions.
pub fn nll_gaussian(ds: &RegressionDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let s: f64 =
        ds.mean.iter().zip(&ds.var).zip(&ds.gt).map(|((m, v), g)| 0.5 * (LN_2PI + v.ln() + (g - m).powi(2) / v)).sum();
    Ok(s / ds.len() as f64)
}

fn mean_over_grid(f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let grid = tau_grid();
    let mut s = 0.0;
    for &t in &grid {
        s += f(t)?;
    }
    Ok(s / grid.len() as f64)
}

/// Equal-width bins on `[0, max(keys)]`; the top bin is closed.
fn bin_by(keys: &[f64], bins: usize) -> Result<Vec<Vec<usize>>> {
    if bins == 0 {
        return invalid("bin count must be positive");
    }
    let max = keys.iter().cloned().fold(0.0, f64::max);
    let mut groups = vec![Vec::new(); bins];
    for (i, &k) in keys.iter().enumerate() {
        let b = if max > 0.0 { ((k / max) * bins as f64) as usize } else { 0 };
        groups[b.min(bins - 1)].push(i);
    }
    Ok(groups)
}

/// Pinball loss of the `tau` quantile averaged over samples.
pub fn pinball(dists: &[CalibratedDistribution], gt: &[f64], tau: f64) -> Result<f64> {
    nonempty(dists)?;
    check_tau(tau)?;
    let s: f64 = dists
        .iter()
        .zip(gt)
        .map(|(d, &g)| {
            let u = g - d.quantile(tau);
            (tau * u).max((tau - 1.0) * u)
        })
        .sum();
    Ok(s / dists.len() as f64)
}

pub fn mean_pinball(dists: &[CalibratedDistribution], gt: &[f64]) -> Result<f64> {
    mean_over_grid(|t| pinball(dists, gt, t))
}

/// Fraction of ground truths inside the central `tau` interval.
pub fn interval_picp(dists: &[CalibratedDistribution], gt: &[f64], tau: f64) -> Result<f64> {
    nonempty(dists)?;
    check_tau(tau)?;
    let hits = dists
        .iter()
        .zip(gt)
        .filter(|(d, &g)| {
            let (lo, hi) = d.interval(tau);
            g >= lo && g <= hi
        })
        .count();
    Ok(hits as f64 / dists.len() as f64)
}

/// Mean width of the central `tau` interval.
pub fn interval_mpiw(dists: &[CalibratedDistribution], tau: f64) -> Result<f64> {
    nonempty(dists)?;
    check_tau(tau)?;
    let s: f64 = dists
        .iter()
        .map(|d| {
            let (lo, hi) = d.interval(tau);
            hi - lo
        })
        .sum();
    Ok(s / dists.len() as f64)
}

/// Mean negative log density of the ground truth.
pub fn nll(dists: &[CalibratedDistribution], gt: &[f64]) -> Result<f64> {
    nonempty(dists)?;
    let s: f64 = dists.iter().zip(gt).map(|(d, &g)| -d.log_pdf(g)).sum();
    Ok(s / dists.len() as f64)
}

/// Uncertainty calibration error over `bins` variance bins on `[0, max]`.
pub fn uce(var: &[f64], mean: &[f64], gt: &[f64], bins: usize) -> Result<f64> {
    nonempty(var)?;
    let groups = bin_by(var, bins)?;
    let n = var.len() as f64;
    Ok(groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let k = g.len() as f64;
            let mse = g.iter().map(|&i| (gt[i] - mean[i]).powi(2)).sum::<f64>() / k;
            let mv = g.iter().map(|&i| var[i]).sum::<f64>() / k;
            k / n * (mse - mv).abs()
        })
        .sum())
}

/// Expected normalized calibration error over `bins` standard-deviation
/// bins on `[0, max]`, averaged over populated bins.
pub fn ence(var: &[f64], mean: &[f64], gt: &[f64], bins: usize) -> Result<f64> {
    nonempty(var)?;
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let groups = bin_by(&sd, bins)?;
    let mut total = 0.0;
    let mut populated = 0usize;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let k = g.len() as f64;
        let rmse = (g.iter().map(|&i| (gt[i] - mean[i]).powi(2)).sum::<f64>() / k).sqrt();
        let rmv = (g.iter().map(|&i| var[i]).sum::<f64>() / k).sqrt();
        total += (rmse - rmv).abs() / rmv;
        populated += 1;
    }
    Ok(total / populated as f64)
}

/// Metrics of one dimension; moment-based metrics are absent for families
/// without finite moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimMetrics {
    pub nll: f64,
    pub mean_pinball: f64,
    pub mean_c_qce: Option<f64>,
    pub uce: Option<f64>,
    pub ence: Option<f64>,
    pub picp_90: f64,
    pub mpiw_90: f64,
}

/// Per-dimension metrics and their means across dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub bins: usize,
    pub per_dim: Vec<DimMetrics>,
    pub mean: DimMetrics,
}

/// Metrics for per-dimension distributions `dists[d][n]` against `gt[d][n]`.
pub fn regression_report(
    dists: &[Vec<CalibratedDistribution>],
    gt: &[Vec<f64>],
    bins: usize,
) -> Result<RegressionReport> {
    if dists.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut per_dim = Vec::with_capacity(dists.len());
    for (ds, g) in dists.iter().zip(gt) {
        let moments: Option<Vec<(f64, f64)>> = ds.iter().map(|d| d.moments()).collect();
        let (c, u, e) = match moments {
            Some(m) => {
                let mean: Vec<f64> = m.iter().map(|p| p.0).collect();
                let var: Vec<f64> = m.iter().map(|p| p.1.max(f64::MIN_POSITIVE)).collect();
                let preds: Vec<GaussianPrediction> =
                    (0..mean.len()).map(|i| GaussianPrediction::diagonal(&[mean[i]], &[var[i]], &[g[i]])).collect();
                (Some(mean_c_qce(&preds, bins)?), Some(uce(&var, &mean, g, bins)?), Some(ence(&var, &mean, g, bins)?))
            }
            None => (None, None, None),
        };
        per_dim.push(DimMetrics {
            nll: nll(ds, g)?,
            mean_pinball: mean_pinball(ds, g)?,
            mean_c_qce: c,
            uce: u,
            ence: e,
            picp_90: interval_picp(ds, g, 0.9)?,
            mpiw_90: interval_mpiw(ds, 0.9)?,
        });
    }
    let k = per_dim.len() as f64;
    let avg = |f: &dyn Fn(&DimMetrics) -> f64| per_dim.iter().map(f).sum::<f64>() / k;
    let avg_opt = |f: &dyn Fn(&DimMetrics) -> Option<f64>| -> Option<f64> {
        per_dim.iter().map(f).collect::<Option<Vec<_>>>().map(|v| v.iter().sum::<f64>() / k)
    };
    let mean = DimMetrics {
        nll: avg(&|m| m.nll),
        mean_pinball: avg(&|m| m.mean_pinball),
        mean_c_qce: avg_opt(&|m| m.mean_c_qce),
        uce: avg_opt(&|m| m.uce),
        ence: avg_opt(&|m| m.ence),
        picp_90: avg(&|m| m.picp_90),
        mpiw_90: avg(&|m| m.mpiw_90),
    };
    Ok(RegressionReport { bins, per_dim, mean })
}

/// Uncalibrated Gaussian distributions per dimension with matching ground truth.
pub fn uncalibrated(ds: &RegressionDataset) -> (Vec<Vec<CalibratedDistribution>>, Vec<Vec<f64>>) {
    let mut dists = Vec::with_capacity(ds.dims);
    let mut gts = Vec::with_capacity(ds.dims);
    for d in 0..ds.dims {
        let (m, v, g) = ds.column(d);
        dists.push(m.iter().zip(&v).map(|(&m, &v)| CalibratedDistribution::gaussian(m, v)).collect());
        gts.push(g);
    }
    (dists, gts)
}

/// Dimension label used in reports.
pub fn dim_name(d: usize, dims: usize) -> String {
    if dims == 4 {
        ["cx", "cy", "w", "h"][d].to_string()
    } else {
        format!("d{d}")
    }
}

pub const REPORT_CSV_HEADER: &str = "metric,tau_or_bins,value";

/// CSV rows `metric,tau_or_bins,value`; the `mean` rows average dimensions.
pub fn report_csv(report: &RegressionReport) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    let dims = report.per_dim.len();
    let rows = report
        .per_dim
        .iter()
        .enumerate()
        .map(|(d, m)| (dim_name(d, dims), m))
        .chain(std::iter::once(("mean".to_string(), &report.mean)));
    for (name, m) in rows {
        let b = report.bins.to_string();
        let mut push = |metric: &str, param: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{metric}_{name},{param},{v}\n"));
            }
        };
        push("nll", "", Some(m.nll));
        push("mean_pinball", "0.05:0.95", Some(m.mean_pinball));
        push("mean_c_qce", &b, m.mean_c_qce);
        push("uce", &b, m.uce);
        push("ence", &b, m.ence);
        push("picp", "0.9", Some(m.picp_90));
        push("mpiw", "0.9", Some(m.mpiw_90));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nees_and_sgv_examples() {
        let p = GaussianPrediction::diagonal(&[0.0; 4], &[1.0; 4], &[1.0; 4]);
        assert!((p.nees().unwrap() - 4.0).abs() < 1e-12);
        let q = GaussianPrediction::diagonal(&[0.0; 4], &[4.0; 4], &[0.0; 4]);
        assert!((q.sgv().unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(q.nees().unwrap(), 0.0);
    }

    #[test]
    fn singular_covariance_is_an_error() {
        let p = GaussianPrediction::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        assert!(p.nees().is_err());
    }

    #[test]
    fn uce_ence_single_bin_examples() {
        // Equal variances put every sample in the top bin.
        let var = [1.0, 1.0];
        let mean = [0.0, 0.0];
        let gt = [2.0, -2.0];
        assert!((uce(&var, &mean, &gt, 20).unwrap() - 3.0).abs() < 1e-12);
        assert!((ence(&var, &mean, &gt, 20).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinball_plugin() {
        let d = vec![CalibratedDistribution::gaussian(0.0, 1.0)];
        assert!((pinball(&d, &[1.0], 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(pinball(&d, &[0.0], 0.5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nll_closed_forms() {
        let ds = RegressionDataset::new(1, vec![0.0], vec![1.0], vec![0.0]).unwrap();
        assert!((nll_gaussian(&ds).unwrap() - 0.918938533204673).abs() < 1e-12);
        let ds4 = RegressionDataset::new(1, vec![0.0], vec![4.0], vec![0.0]).unwrap();
        assert!((nll_gaussian(&ds4).unwrap() - nll_gaussian(&ds).unwrap() - 2f64.ln()).abs() < 1e-12);
        let ds2 = RegressionDataset::new(2, vec![0.0, 1.0], vec![2.0, 3.0], vec![0.5, -1.0]).unwrap();
        let full = nll_gaussian_full(&predictions(&ds2)).unwrap();
        assert!((full - nll_gaussian(&ds2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn all_nees_zero_gives_one_minus_tau() {
        let preds = vec![GaussianPrediction::diagonal(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 2.0]); 5];
        assert!((m_qce(&preds, 0.8).unwrap() - 0.2).abs() < 1e-12);
    }
}
