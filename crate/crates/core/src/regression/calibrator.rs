use nalgebra::DMatrix;
use serde_json::Value;

use super::dataset::RegressionDataset;
use super::distribution::{moment_match, CalibratedDistribution};
use super::gp_models::{CovarianceModel, GpFamily, GpJointNormalModel, GpUnivariateModel};
use super::isotonic::IsotonicModel;
use super::metrics::{regression_report, GaussianPrediction, RegressionReport};
use super::variance::VarianceScalingModel;
use crate::error::{invalid, Error, Result};

/// Any fitted spatial-uncertainty calibrator.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressionCalibrator {
    Isotonic(IsotonicModel),
    VarianceScaling(VarianceScalingModel),
    Gp(GpUnivariateModel),
    GpJoint(GpJointNormalModel),
    Covariance(CovarianceModel),
}

impl RegressionCalibrator {
    pub fn method(&self) -> &'static str {
        match self {
            RegressionCalibrator::Isotonic(_) => "isotonic",
            RegressionCalibrator::VarianceScaling(_) => "variance_scaling",
            RegressionCalibrator::Gp(m) => match m.family {
                GpFamily::Normal => "gp_normal",
                GpFamily::Cauchy => "gp_cauchy",
                GpFamily::Beta => "gp_beta",
            },
            RegressionCalibrator::GpJoint(_) => "gp_normal_joint",
            RegressionCalibrator::Covariance(_) => "gp_normal_mv",
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            RegressionCalibrator::Isotonic(m) => m.maps.len(),
            RegressionCalibrator::VarianceScaling(m) => m.scale.len(),
            RegressionCalibrator::Gp(m) => m.dims.len(),
            RegressionCalibrator::GpJoint(m) => m.gp.input_dims,
            RegressionCalibrator::Covariance(m) => m.dims,
        }
    }

    /// Calibrated marginal distribution of dimension `dim` for one sample.
    pub fn marginal(&self, dim: usize, mean: &[f64], var: &[f64]) -> Result<CalibratedDistribution> {
        match self {
            RegressionCalibrator::Isotonic(m) => {
                m.transform(dim, mean[dim], var[dim], super::distribution::DEFAULT_SUPPORT)
            }
            RegressionCalibrator::VarianceScaling(m) => Ok(m.transform(dim, mean[dim], var[dim])),
            RegressionCalibrator::Gp(m) => m.transform(dim, mean[dim], var[dim]),
            RegressionCalibrator::GpJoint(m) => {
                Ok(CalibratedDistribution::gaussian(mean[dim], m.transform(mean, var)[dim]))
            }
            RegressionCalibrator::Covariance(m) => {
                let c = m.covariance(mean, var)?;
                Ok(CalibratedDistribution::gaussian(mean[dim], c[(dim, dim)]))
            }
        }
    }

    fn check_dims(&self, dims: usize) -> Result<()> {
        if dims != self.dims() {
            return invalid(format!("model calibrates {} dimensions, data has {dims}", self.dims()));
        }
        Ok(())
    }

    /// Calibrated marginals `out[dim][sample]`.
    pub fn distributions(&self, ds: &RegressionDataset) -> Result<Vec<Vec<CalibratedDistribution>>> {
        self.check_dims(ds.dims)?;
        let mut out = vec![Vec::with_capacity(ds.len()); ds.dims];
        for n in 0..ds.len() {
            for (d, col) in out.iter_mut().enumerate() {
                col.push(self.marginal(d, ds.mean_of(n), ds.var_of(n))?);
            }
        }
        Ok(out)
    }

    /// Calibrated Gaussian for one sample. Non-parametric outputs are
    /// moment-matched per dimension; Cauchy outputs have no Gaussian form.
    pub fn gaussian(&self, mean: &[f64], var: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(mean.len())?;
        if let RegressionCalibrator::Covariance(m) = self {
            return m.covariance(mean, var);
        }
        let mut diag = Vec::with_capacity(mean.len());
        for d in 0..mean.len() {
            let (_, v) = moment_match(&self.marginal(d, mean, var)?)?;
            diag.push(v.max(f64::MIN_POSITIVE));
        }
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)))
    }

    /// Full-covariance predictions, available for Gaussian outputs.
    pub fn predictions(&self, ds: &RegressionDataset) -> Result<Vec<GaussianPrediction>> {
        self.check_dims(ds.dims)?;
        (0..ds.len())
            .map(|n| {
                let mean = ds.mean_of(n);
                let mut mu = mean.to_vec();
                if matches!(self, RegressionCalibrator::Isotonic(_) | RegressionCalibrator::Gp(_)) {
                    for (d, m) in mu.iter_mut().enumerate() {
                        *m = moment_match(&self.marginal(d, mean, ds.var_of(n))?)?.0;
                    }
                }
                GaussianPrediction::new(
                    nalgebra::DVector::from_vec(mu),
                    self.gaussian(mean, ds.var_of(n))?,
                    nalgebra::DVector::from_column_slice(ds.gt_of(n)),
                )
            })
            .collect()
    }

    pub fn report(&self, ds: &RegressionDataset, bins: usize) -> Result<RegressionReport> {
        let dists = self.distributions(ds)?;
        let gts: Vec<Vec<f64>> = (0..ds.dims).map(|d| ds.column(d).2).collect();
        regression_report(&dists, &gts, bins)
    }

    pub fn to_json_value(&self) -> Result<Value> {
        let mut v = match self {
            RegressionCalibrator::Isotonic(m) => serde_json::to_value(m)?,
            RegressionCalibrator::VarianceScaling(m) => serde_json::to_value(m)?,
            RegressionCalibrator::Gp(m) => serde_json::to_value(m)?,
            RegressionCalibrator::GpJoint(m) => serde_json::to_value(m)?,
            RegressionCalibrator::Covariance(m) => serde_json::to_value(m)?,
        };
        if let Value::Object(map) = &mut v {
            map.remove("family");
            map.insert("method".into(), Value::String(self.method().into()));
        }
        Ok(v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value()?)?)
    }

    pub fn from_json_value(mut v: Value) -> Result<Self> {
        let method = v
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidInput("model JSON has no string `method` tag".into()))?
            .to_string();
        let map = match &mut v {
            Value::Object(map) => map,
            _ => return invalid("model JSON must be an object"),
        };
        map.remove("method");
        let family = match method.as_str() {
            "gp_normal" => Some("normal"),
            "gp_cauchy" => Some("cauchy"),
            "gp_beta" => Some("beta"),
            _ => None,
        };
        if let Some(f) = family {
            map.insert("family".into(), Value::String(f.into()));
        }
        let out = match method.as_str() {
            "isotonic" => {
                let m: IsotonicModel = serde_json::from_value(v)?;
                if m.maps.iter().any(|p| p.x.is_empty() || p.x.len() != p.y.len()) {
                    return invalid("isotonic map needs equally long, nonempty breakpoint arrays");
                }
                RegressionCalibrator::Isotonic(m)
            }
            "variance_scaling" => RegressionCalibrator::VarianceScaling(serde_json::from_value(v)?),
            "gp_normal" | "gp_cauchy" | "gp_beta" => {
                let m: GpUnivariateModel = serde_json::from_value(v)?;
                for g in &m.dims {
                    g.validate()?;
                    if g.outputs != m.family.outputs() {
                        return invalid(format!("{method} needs {} latent outputs", m.family.outputs()));
                    }
                }
                RegressionCalibrator::Gp(m)
            }
            "gp_normal_joint" => {
                let m: GpJointNormalModel = serde_json::from_value(v)?;
                m.gp.validate()?;
                RegressionCalibrator::GpJoint(m)
            }
            "gp_normal_mv" => {
                let m: CovarianceModel = serde_json::from_value(v)?;
                m.gp.validate()?;
                if m.correlation.len() != m.dims * m.dims || m.gp.outputs != m.dims + m.dims * (m.dims - 1) / 2 {
                    return invalid("covariance model arrays have inconsistent sizes");
                }
                RegressionCalibrator::Covariance(m)
            }
            other => return Err(Error::InvalidInput(format!("unknown regression calibration method '{other}'"))),
        };
        Ok(out)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(s)?)
    }
}
