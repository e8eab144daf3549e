use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::RegressionDataset;
use super::distribution::{support, CalibratedDistribution, DEFAULT_SUPPORT};
use super::gp::{fit_gp, subsample, GpConfig, GpFitReport, GpScaleModel, MIN_GP_SAMPLES};
use super::metrics::GaussianPrediction;
use crate::error::{invalid, Error, Result};
use crate::special::{log_sigmoid, sigmoid, std_normal_cdf, std_normal_pdf};

/// Largest absolute latent used at prediction time.
const LATENT_CLAMP: f64 = 20.0;
/// Standardized residuals are clamped here before taking log-CDFs.
const Z_CLAMP: f64 = 30.0;

/// Output family of a univariate GP calibrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpFamily {
    Normal,
    Cauchy,
    Beta,
}

impl GpFamily {
    pub fn outputs(self) -> usize {
        match self {
            GpFamily::Normal | GpFamily::Cauchy => 1,
            GpFamily::Beta => 3,
        }
    }
}

/// One GP per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpUnivariateModel {
    pub family: GpFamily,
    pub dims: Vec<GpScaleModel>,
}

fn normal_nll(z2: f64, w: &[f64], g: &mut [f64]) -> f64 {
    let e = (-2.0 * w[0]).exp();
    g[0] += 1.0 - z2 * e;
    w[0] + 0.5 * z2 * e
}

fn cauchy_nll(z2: f64, w: &[f64], g: &mut [f64]) -> f64 {
    let u = z2 * (-2.0 * w[0]).exp();
    g[0] += (1.0 - u) / (1.0 + u);
    w[0] + u.ln_1p()
}

/// `ln F(z)` and `ln(1 - F(z))` for the standard normal CDF.
fn log_cdfs(z: f64) -> (f64, f64) {
    let z = z.clamp(-Z_CLAMP, Z_CLAMP);
    (std_normal_cdf(z).ln(), std_normal_cdf(-z).ln())
}

/// `ln(a/F + b/(1-F))` from logs.
fn log_density_factor(wa: f64, wb: f64, lf: f64, lg: f64) -> f64 {
    let (x, y) = (wa - lf, wb - lg);
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// Negative log of the beta-link density factor `h'` at standardized residual `z`.
fn beta_nll(z: f64, w: &[f64], g: &mut [f64]) -> f64 {
    let (lf, lg) = log_cdfs(z);
    let (a, b) = (w[0].exp(), w[1].exp());
    let zb = a * lf - b * lg + w[2];
    let lt = log_density_factor(w[0], w[1], lf, lg);
    let s = 2.0 * sigmoid(zb) - 1.0;
    g[0] += s * a * lf - (w[0] - lf - lt).exp();
    g[1] += -s * b * lg - (w[1] - lg - lt).exp();
    g[2] += s;
    -log_sigmoid(zb) - log_sigmoid(-zb) - lt
}

fn train_columns(ds: &RegressionDataset, idx: &[usize], d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut mean = Vec::with_capacity(idx.len());
    let mut var = Vec::with_capacity(idx.len());
    let mut z = Vec::with_capacity(idx.len());
    for &i in idx {
        let (m, v, g) = (ds.mean_of(i)[d], ds.var_of(i)[d], ds.gt_of(i)[d]);
        mean.push(m);
        var.push(v);
        z.push((g - m) / v.sqrt());
    }
    (mean, var, z)
}

fn check_size(ds: &RegressionDataset) -> Result<()> {
    if ds.len() < MIN_GP_SAMPLES {
        return invalid(format!("GP calibration needs at least {MIN_GP_SAMPLES} samples, got {}", ds.len()));
    }
    Ok(())
}

/// Univariate GP calibrator per dimension with the given output family.
pub fn fit_gp_univariate(
    ds: &RegressionDataset,
    family: GpFamily,
    cfg: &GpConfig,
) -> Result<(GpUnivariateModel, Vec<GpFitReport>)> {
    check_size(ds)?;
    let idx = subsample(ds.len(), cfg.max_points, cfg.seed);
    let mut dims = Vec::with_capacity(ds.dims);
    let mut reports = Vec::with_capacity(ds.dims);
    for d in 0..ds.dims {
        let (mean, var, z) = train_columns(ds, &idx, d);
        let report = match family {
            GpFamily::Normal => fit_gp(mean, var, 1, 1, |n, w, g| normal_nll(z[n] * z[n], w, g), cfg)?,
            GpFamily::Cauchy => fit_gp(mean, var, 1, 1, |n, w, g| cauchy_nll(z[n] * z[n], w, g), cfg)?,
            GpFamily::Beta => fit_gp(mean, var, 1, 3, |n, w, g| beta_nll(z[n], w, g), cfg)?,
        };
        dims.push(report.model.clone());
        reports.push(report);
    }
    Ok((GpUnivariateModel { family, dims }, reports))
}

pub fn fit_gp_normal(ds: &RegressionDataset, cfg: &GpConfig) -> Result<GpUnivariateModel> {
    Ok(fit_gp_univariate(ds, GpFamily::Normal, cfg)?.0)
}

pub fn fit_gp_cauchy(ds: &RegressionDataset, cfg: &GpConfig) -> Result<GpUnivariateModel> {
    Ok(fit_gp_univariate(ds, GpFamily::Cauchy, cfg)?.0)
}

pub fn fit_gp_beta(ds: &RegressionDataset, cfg: &GpConfig) -> Result<GpUnivariateModel> {
    Ok(fit_gp_univariate(ds, GpFamily::Beta, cfg)?.0)
}

/// Beta-link distribution on the support of `N(mu, var)` with latents `(wa, wb, wc)`.
pub fn beta_link_distribution(mu: f64, var: f64, w: &[f64], t: usize) -> Result<CalibratedDistribution> {
    let sigma = var.sqrt();
    let x = support(mu, sigma, t);
    let (a, b, c) = (w[0].exp(), w[1].exp(), w[2]);
    let mut cdf = Vec::with_capacity(t);
    let mut pdf = Vec::with_capacity(t);
    for &v in &x {
        let z = (v - mu) / sigma;
        let (lf, lg) = log_cdfs(z);
        let gcdf = sigmoid(a * lf - b * lg + c);
        cdf.push(gcdf);
        pdf.push(gcdf * (1.0 - gcdf) * log_density_factor(w[0], w[1], lf, lg).exp() * std_normal_pdf(z) / sigma);
    }
    CalibratedDistribution::from_cdf_pdf(x, cdf, pdf)
}

impl GpUnivariateModel {
    pub fn latents(&self, dim: usize, mu: f64, var: f64) -> Vec<f64> {
        self.dims[dim].predict(&[mu], &[var]).into_iter().map(|w| w.clamp(-LATENT_CLAMP, LATENT_CLAMP)).collect()
    }

    pub fn transform(&self, dim: usize, mu: f64, var: f64) -> Result<CalibratedDistribution> {
        let w = self.latents(dim, mu, var);
        match self.family {
            GpFamily::Normal => Ok(CalibratedDistribution::gaussian(mu, var * (2.0 * w[0]).exp())),
            GpFamily::Cauchy => Ok(CalibratedDistribution::Cauchy { loc: mu, scale: var.sqrt() * w[0].exp() }),
            GpFamily::Beta => beta_link_distribution(mu, var, &w, DEFAULT_SUPPORT),
        }
    }

    pub fn transform_dataset(&self, ds: &RegressionDataset) -> Result<Vec<Vec<CalibratedDistribution>>> {
        if ds.dims != self.dims.len() {
            return invalid("dataset dimension differs from the model");
        }
        (0..ds.dims)
            .map(|d| {
                let (m, v, _) = ds.column(d);
                m.iter().zip(&v).map(|(&m, &v)| self.transform(d, m, v)).collect()
            })
            .collect()
    }
}

/// Joint GP-Normal: one multi-output GP over all dimensions with independent
/// Gaussian outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpJointNormalModel {
    pub gp: GpScaleModel,
}

fn train_rows(ds: &RegressionDataset, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut mean = Vec::with_capacity(idx.len() * ds.dims);
    let mut var = Vec::with_capacity(idx.len() * ds.dims);
    for &i in idx {
        mean.extend_from_slice(ds.mean_of(i));
        var.extend_from_slice(ds.var_of(i));
    }
    (mean, var)
}

pub fn fit_gp_normal_joint(ds: &RegressionDataset, cfg: &GpConfig) -> Result<GpJointNormalModel> {
    check_size(ds)?;
    let idx = subsample(ds.len(), cfg.max_points, cfg.seed);
    let l = ds.dims;
    let (mean, var) = train_rows(ds, &idx);
    let z2: Vec<f64> = idx
        .iter()
        .flat_map(|&i| (0..l).map(move |d| (ds.gt_of(i)[d] - ds.mean_of(i)[d]).powi(2) / ds.var_of(i)[d]))
        .collect();
    let report = fit_gp(
        mean,
        var,
        l,
        l,
        |n, w, g| (0..l).map(|d| normal_nll(z2[n * l + d], &w[d..d + 1], &mut g[d..d + 1])).sum(),
        cfg,
    )?;
    Ok(GpJointNormalModel { gp: report.model })
}

impl GpJointNormalModel {
    /// Calibrated variances for one sample.
    pub fn transform(&self, mean: &[f64], var: &[f64]) -> Vec<f64> {
        let w = self.gp.predict(mean, var);
        var.iter().zip(w).map(|(v, w)| v * (2.0 * w.clamp(-LATENT_CLAMP, LATENT_CLAMP)).exp()).collect()
    }

    pub fn transform_dataset(&self, ds: &RegressionDataset) -> RegressionDataset {
        let mut out = ds.clone();
        for n in 0..ds.len() {
            let v = self.transform(ds.mean_of(n), ds.var_of(n));
            out.var[n * ds.dims..(n + 1) * ds.dims].copy_from_slice(&v);
        }
        out
    }
}

/// `A = L D Lᵀ` with unit lower-triangular `L`.
pub fn ldl(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::identity(n, n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = a[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(dj > 0.0) {
            return Err(Error::NotPositiveDefinite("LDL pivot is not positive".into()));
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok((l, d))
}

/// Lower-triangular index pairs `(i, j)`, `i > j`, in row order.
fn off_diagonal(l: usize) -> Vec<(usize, usize)> {
    (1..l).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

/// Covariance estimation: a correlation prior rescaled in `L D Lᵀ` form by a
/// multi-output GP. Latents are `L` log-scales of `D` followed by additive
/// offsets of the strictly lower entries of `L`, each in units of
/// `sqrt(D_i / D_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub dims: usize,
    /// Row-major marginal correlation matrix of standardized residuals.
    pub correlation: Vec<f64>,
    pub gp: GpScaleModel,
}

/// Pearson correlations of standardized residuals.
pub fn residual_correlation(ds: &RegressionDataset) -> Result<DMatrix<f64>> {
    let (l, n) = (ds.dims, ds.len());
    if n < 2 {
        return Err(Error::NoSamples);
    }
    let z: Vec<f64> = (0..ds.mean.len()).map(|i| (ds.gt[i] - ds.mean[i]) / ds.var[i].sqrt()).collect();
    let mut mu = vec![0.0; l];
    for i in 0..n {
        for d in 0..l {
            mu[d] += z[i * l + d] / n as f64;
        }
    }
    let mut c = DMatrix::<f64>::zeros(l, l);
    for i in 0..n {
        for a in 0..l {
            for b in 0..l {
                c[(a, b)] += (z[i * l + a] - mu[a]) * (z[i * l + b] - mu[b]);
            }
        }
    }
    let mut r = DMatrix::<f64>::identity(l, l);
    for a in 0..l {
        for b in 0..l {
            if a != b {
                let d = (c[(a, a)] * c[(b, b)]).sqrt();
                r[(a, b)] = if d > 0.0 { c[(a, b)] / d } else { 0.0 };
            }
        }
    }
    // Keep the prior strictly positive definite.
    while ldl(&r).is_err() {
        r = r * 0.99 + DMatrix::<f64>::identity(l, l) * 0.01;
    }
    Ok(r)
}

fn prior_ldl(corr: &DMatrix<f64>, var: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let s = DVector::from_iterator(var.len(), var.iter().map(|v| v.sqrt()));
    let sigma = DMatrix::from_diagonal(&s) * corr * DMatrix::from_diagonal(&s);
    ldl(&sigma)
}

/// Applies latents `w` to a prior decomposition; returns `(L', D')`.
fn rescale(l: &DMatrix<f64>, d: &[f64], w: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let k = d.len();
    let mut lp = l.clone();
    for (q, &(i, j)) in off_diagonal(k).iter().enumerate() {
        lp[(i, j)] += w[k + q] * (d[i] / d[j]).sqrt();
    }
    let dp = (0..k).map(|i| d[i] * w[i].exp()).collect();
    (lp, dp)
}

/// `L D Lᵀ`, filled symmetrically.
fn compose(l: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let k = d.len();
    let mut s = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let v: f64 = (0..=j).map(|m| l[(i, m)] * d[m] * l[(j, m)]).sum();
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Gaussian NLL of residual `r` under `L' D' L'ᵀ`, up to the `2π` constant,
/// with the gradient with respect to the latents added to `g`.
fn covariance_nll(l: &DMatrix<f64>, d: &[f64], r: &[f64], w: &[f64], g: &mut [f64]) -> f64 {
    let k = d.len();
    let (lp, dp) = rescale(l, d, w);
    let mut y = vec![0.0; k];
    for i in 0..k {
        y[i] = r[i] - (0..i).map(|j| lp[(i, j)] * y[j]).sum::<f64>();
    }
    let gy: Vec<f64> = (0..k).map(|i| y[i] / dp[i]).collect();
    let mut u = vec![0.0; k];
    for i in (0..k).rev() {
        u[i] = gy[i] - (i + 1..k).map(|m| lp[(m, i)] * u[m]).sum::<f64>();
    }
    let mut loss = 0.0;
    for i in 0..k {
        loss += 0.5 * (dp[i].ln() + y[i] * gy[i]);
        g[i] += 0.5 - 0.5 * y[i] * gy[i];
    }
    for (q, &(i, j)) in off_diagonal(k).iter().enumerate() {
        g[k + q] += -u[i] * y[j] * (d[i] / d[j]).sqrt();
    }
    loss
}

pub fn estimate_covariance(ds: &RegressionDataset, cfg: &GpConfig) -> Result<CovarianceModel> {
    check_size(ds)?;
    let l = ds.dims;
    let corr = residual_correlation(ds)?;
    let idx = subsample(ds.len(), cfg.max_points, cfg.seed);
    let (mean, var) = train_rows(ds, &idx);
    let priors = idx.iter().map(|&i| prior_ldl(&corr, ds.var_of(i))).collect::<Result<Vec<_>>>()?;
    let resid: Vec<Vec<f64>> =
        idx.iter().map(|&i| ds.gt_of(i).iter().zip(ds.mean_of(i)).map(|(g, m)| g - m).collect()).collect();
    let p = l + l * (l - 1) / 2;
    let report = fit_gp(mean, var, l, p, |n, w, g| covariance_nll(&priors[n].0, &priors[n].1, &resid[n], w, g), cfg)?;
    Ok(CovarianceModel { dims: l, correlation: corr.transpose().as_slice().to_vec(), gp: report.model })
}

impl CovarianceModel {
    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dims, self.dims, &self.correlation)
    }

    /// Correlation prior covariance for one sample.
    pub fn prior(&self, var: &[f64]) -> Result<DMatrix<f64>> {
        let (l, d) = prior_ldl(&self.correlation_matrix(), var)?;
        Ok(compose(&l, &d))
    }

    /// Calibrated covariance with explicit latents.
    pub fn covariance_with(&self, var: &[f64], w: &[f64]) -> Result<DMatrix<f64>> {
        let (l, d) = prior_ldl(&self.correlation_matrix(), var)?;
        let (lp, dp) = rescale(&l, &d, w);
        Ok(compose(&lp, &dp))
    }

    pub fn covariance(&self, mean: &[f64], var: &[f64]) -> Result<DMatrix<f64>> {
        let w: Vec<f64> =
            self.gp.predict(mean, var).into_iter().map(|w| w.clamp(-LATENT_CLAMP, LATENT_CLAMP)).collect();
        self.covariance_with(var, &w)
    }

    pub fn transform_dataset(&self, ds: &RegressionDataset) -> Result<Vec<GaussianPrediction>> {
        (0..ds.len())
            .map(|n| {
                let cov = self.covariance(ds.mean_of(n), ds.var_of(n))?;
                GaussianPrediction::new(
                    DVector::from_column_slice(ds.mean_of(n)),
                    cov,
                    DVector::from_column_slice(ds.gt_of(n)),
                )
            })
            .collect()
    }
}
