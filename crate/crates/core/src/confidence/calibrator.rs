use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::bayesian::VariationalPosterior;
use super::histogram::HistogramBinningModel;
use super::scaling::ScalingModel;
use crate::error::{Error, Result};
use crate::model::{Feature, FeatureValues, MatchedDataset};

/// Bayesian calibrator: posterior plus the draw count and seed used for the
/// predictive mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianCalibrator {
    pub posterior: VariationalPosterior,
    pub draws: usize,
    pub seed: u64,
}

/// Any fitted confidence calibrator.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfidenceCalibrator {
    Histogram(HistogramBinningModel),
    Scaling(ScalingModel),
    Bayesian(BayesianCalibrator),
}

impl ConfidenceCalibrator {
    pub fn transform(&self, values: &FeatureValues) -> f64 {
        match self {
            ConfidenceCalibrator::Histogram(m) => m.transform(values),
            ConfidenceCalibrator::Scaling(m) => m.transform(values),
            ConfidenceCalibrator::Bayesian(b) => b.posterior.transform(values, b.draws, b.seed),
        }
    }

    pub fn transform_dataset(&self, ds: &MatchedDataset) -> Vec<f64> {
        (0..ds.len()).map(|i| self.transform(&ds.features(i))).collect()
    }

    /// Dataset with calibrated confidences.
    pub fn calibrate_dataset(&self, ds: &MatchedDataset) -> Result<MatchedDataset> {
        ds.with_confidences(&self.transform_dataset(ds))
    }

    pub fn features(&self) -> &[Feature] {
        match self {
            ConfidenceCalibrator::Histogram(m) => &m.features,
            ConfidenceCalibrator::Scaling(m) => &m.features,
            ConfidenceCalibrator::Bayesian(b) => &b.posterior.features,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            ConfidenceCalibrator::Histogram(_) => "histogram",
            ConfidenceCalibrator::Scaling(m) => scaling_tag(m),
            ConfidenceCalibrator::Bayesian(_) => "bayesian",
        }
    }

    /// JSON object carrying a `method` tag.
    pub fn to_json_value(&self) -> Result<Value> {
        let mut v = match self {
            ConfidenceCalibrator::Histogram(m) => serde_json::to_value(m)?,
            ConfidenceCalibrator::Scaling(m) => serde_json::to_value(m)?,
            ConfidenceCalibrator::Bayesian(b) => serde_json::to_value(b)?,
        };
        if let Value::Object(map) = &mut v {
            map.remove("kind");
            map.insert("method".into(), Value::String(self.method().into()));
        }
        Ok(v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value()?)?)
    }

    /// Parses a tagged model; unknown `method` values are rejected.
    pub fn from_json_value(mut v: Value) -> Result<Self> {
        let method = v
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidInput("model JSON has no string `method` tag".into()))?
            .to_string();
        if let Value::Object(map) = &mut v {
            map.remove("method");
        }
        match method.as_str() {
            "histogram" => Ok(ConfidenceCalibrator::Histogram(serde_json::from_value(v)?)),
            "logistic" | "logistic_dependent" | "beta" | "beta_dependent" => {
                if let Value::Object(map) = &mut v {
                    map.insert("kind".into(), Value::String(method.clone()));
                }
                let m: ScalingModel = serde_json::from_value(v)?;
                let expected = m.link().n_params();
                if m.params.len() != expected {
                    return Err(Error::InvalidInput(format!(
                        "{method} model needs {expected} parameters, found {}",
                        m.params.len()
                    )));
                }
                Ok(ConfidenceCalibrator::Scaling(m))
            }
            "bayesian" => Ok(ConfidenceCalibrator::Bayesian(serde_json::from_value(v)?)),
            other => Err(Error::InvalidInput(format!("unknown confidence calibration method '{other}'"))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(s)?)
    }
}

fn scaling_tag(m: &ScalingModel) -> &'static str {
    use super::scaling::ScalingKind::*;
    match m.kind {
        Logistic => "logistic",
        LogisticDependent => "logistic_dependent",
        Beta => "beta",
        BetaDependent => "beta_dependent",
    }
}
