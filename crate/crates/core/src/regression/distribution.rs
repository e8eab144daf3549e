use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::special::{normal_cdf, std_normal_quantile, LN_2PI};

/// Support points per non-parametric distribution.
pub const DEFAULT_SUPPORT: usize = 512;
/// Half-width of the support in input standard deviations.
pub const SUPPORT_SIGMAS: f64 = 8.0;

/// Univariate calibrated predictive distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CalibratedDistribution {
    Gaussian {
        mean: f64,
        var: f64,
    },
    Cauchy {
        loc: f64,
        scale: f64,
    },
    /// CDF values on ascending support points; densities at the same points.
    NonParametric {
        x: Vec<f64>,
        cdf: Vec<f64>,
        pdf: Vec<f64>,
    },
}

impl CalibratedDistribution {
    pub fn gaussian(mean: f64, var: f64) -> Self {
        CalibratedDistribution::Gaussian { mean, var }
    }

    /// Builds a non-parametric distribution from raw CDF values: endpoints
    /// are renormalized to 0 and 1 and densities taken by finite differences.
    pub fn from_cdf(x: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let cdf = renormalize(&raw)?;
        let pdf = finite_difference(&x, &cdf);
        Ok(CalibratedDistribution::NonParametric { x, cdf, pdf })
    }

    /// Like [`from_cdf`](Self::from_cdf) with densities supplied; densities are
    /// divided by the same normalizing span as the CDF.
    pub fn from_cdf_pdf(x: Vec<f64>, raw: Vec<f64>, pdf: Vec<f64>) -> Result<Self> {
        let span = raw[raw.len() - 1] - raw[0];
        let cdf = renormalize(&raw)?;
        let pdf = pdf.into_iter().map(|p| p / span).collect();
        Ok(CalibratedDistribution::NonParametric { x, cdf, pdf })
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            CalibratedDistribution::Gaussian { mean, var } => normal_cdf(v, *mean, var.sqrt()),
            CalibratedDistribution::Cauchy { loc, scale } => 0.5 + ((v - loc) / scale).atan() / std::f64::consts::PI,
            CalibratedDistribution::NonParametric { x, cdf, .. } => interp(x, cdf, v),
        }
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        match self {
            CalibratedDistribution::Gaussian { mean, var } => mean + var.sqrt() * std_normal_quantile(tau),
            CalibratedDistribution::Cauchy { loc, scale } => loc + scale * (std::f64::consts::PI * (tau - 0.5)).tan(),
            CalibratedDistribution::NonParametric { x, cdf, .. } => {
                let t = tau.clamp(0.0, 1.0);
                let i = cdf.partition_point(|&c| c < t);
                if i == 0 {
                    return x[0];
                }
                if i >= cdf.len() {
                    return x[x.len() - 1];
                }
                let (c0, c1) = (cdf[i - 1], cdf[i]);
                if c1 <= c0 {
                    return x[i];
                }
                x[i - 1] + (x[i] - x[i - 1]) * (t - c0) / (c1 - c0)
            }
        }
    }

    pub fn log_pdf(&self, v: f64) -> f64 {
        match self {
            CalibratedDistribution::Gaussian { mean, var } => -0.5 * (LN_2PI + var.ln() + (v - mean).powi(2) / var),
            CalibratedDistribution::Cauchy { loc, scale } => {
                -(std::f64::consts::PI * scale).ln() - ((v - loc) / scale).powi(2).ln_1p()
            }
            CalibratedDistribution::NonParametric { x, pdf, .. } => {
                if v < x[0] || v > x[x.len() - 1] {
                    f64::NEG_INFINITY
                } else {
                    interp_raw(x, pdf, v).ln()
                }
            }
        }
    }

    /// Mean and variance; non-parametric distributions are moment-matched.
    /// Cauchy distributions have no moments and return `None`.
    pub fn moments(&self) -> Option<(f64, f64)> {
        match self {
            CalibratedDistribution::Gaussian { mean, var } => Some((*mean, *var)),
            CalibratedDistribution::Cauchy { .. } => None,
            CalibratedDistribution::NonParametric { x, cdf, .. } => Some(moment_match_points(x, cdf)),
        }
    }

    /// Central interval with coverage `tau`.
    pub fn interval(&self, tau: f64) -> (f64, f64) {
        (self.quantile(0.5 * (1.0 - tau)), self.quantile(0.5 * (1.0 + tau)))
    }
}

/// Gaussian with the mean and variance of a non-parametric distribution,
/// integrated over the support intervals with midpoint masses.
pub fn moment_match(d: &CalibratedDistribution) -> Result<(f64, f64)> {
    match d {
        CalibratedDistribution::NonParametric { x, cdf, .. } => Ok(moment_match_points(x, cdf)),
        CalibratedDistribution::Gaussian { mean, var } => Ok((*mean, *var)),
        CalibratedDistribution::Cauchy { .. } => invalid("a Cauchy distribution has no finite moments"),
    }
}

fn moment_match_points(x: &[f64], cdf: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    for t in 1..x.len() {
        mean += 0.5 * (x[t] + x[t - 1]) * (cdf[t] - cdf[t - 1]);
    }
    let mut var = 0.0;
    for t in 1..x.len() {
        let m = 0.5 * (x[t] + x[t - 1]);
        var += (m - mean).powi(2) * (cdf[t] - cdf[t - 1]);
    }
    (mean, var.max(0.0))
}

/// Support grid `mu ± 8 sigma` with `t` points.
pub fn support(mu: f64, sigma: f64, t: usize) -> Vec<f64> {
    let lo = mu - SUPPORT_SIGMAS * sigma;
    let step = 2.0 * SUPPORT_SIGMAS * sigma / (t - 1) as f64;
    (0..t).map(|i| lo + step * i as f64).collect()
}

/// Gaussian CDF on a support grid.
pub fn gaussian_cdf_on(x: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    x.iter().map(|&v| normal_cdf(v, mu, sigma)).collect()
}

fn renormalize(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() < 2 {
        return invalid("a non-parametric distribution needs at least two support points");
    }
    let (lo, hi) = (raw[0], raw[raw.len() - 1]);
    if !(hi > lo) {
        return invalid("calibrated CDF is flat over the support");
    }
    let mut out: Vec<f64> = raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect();
    for i in 1..out.len() {
        if out[i] < out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    Ok(out)
}

fn finite_difference(x: &[f64], c: &[f64]) -> Vec<f64> {
    let t = x.len();
    (0..t)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(t - 1));
            (c[b] - c[a]) / (x[b] - x[a])
        })
        .collect()
}

fn interp(x: &[f64], y: &[f64], v: f64) -> f64 {
    if v <= x[0] {
        return 0.0;
    }
    if v >= x[x.len() - 1] {
        return 1.0;
    }
    interp_raw(x, y, v)
}

fn interp_raw(x: &[f64], y: &[f64], v: f64) -> f64 {
    let i = x.partition_point(|&p| p <= v).clamp(1, x.len() - 1);
    let (x0, x1) = (x[i - 1], x[i]);
    y[i - 1] + (y[i] - y[i - 1]) * (v - x0) / (x1 - x0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_match_recovers_gaussian() {
        let (mu, sigma) = (3.0, 2.0);
        let x = support(mu, sigma, DEFAULT_SUPPORT);
        let c = gaussian_cdf_on(&x, mu, sigma);
        let d = CalibratedDistribution::from_cdf(x, c).unwrap();
        let (m, v) = moment_match(&d).unwrap();
        assert!((m - mu).abs() < 0.01 * sigma);
        assert!((v / (sigma * sigma) - 1.0).abs() < 0.01);
        assert!((d.quantile(0.5) - mu).abs() < 1e-9);
        assert!((d.quantile(0.975) - (mu + 1.959964 * sigma)).abs() < 0.01);
    }

    #[test]
    fn cauchy_center_density() {
        let d = CalibratedDistribution::Cauchy { loc: 1.0, scale: 0.5 };
        assert!((-d.log_pdf(1.0) - (std::f64::consts::PI * 0.5).ln()).abs() < 1e-14);
        assert!(moment_match(&d).is_err());
    }

    #[test]
    fn renormalized_cdf_monotone_with_unit_limits() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let d = CalibratedDistribution::from_cdf(x, vec![0.1, 0.3, 0.29, 0.9]).unwrap();
        if let CalibratedDistribution::NonParametric { cdf, .. } = &d {
            assert_eq!(cdf[0], 0.0);
            assert_eq!(cdf[3], 1.0);
            assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
