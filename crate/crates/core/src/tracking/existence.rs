use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-state Markov chain over "the track matches an object" together with
/// the detector precision prior and lifecycle thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExistenceConfig {
    /// `P(m_t = 1 | m_{t-1} = 1)`.
    pub survival: f64,
    /// `P(m_t = 1 | m_{t-1} = 0)`.
    pub birth: f64,
    /// Prior match probability of a detection, `P(m̂ = 1)`.
    pub precision: f64,
    pub drop_threshold: f64,
    pub report_threshold: f64,
    /// Association gate as a chi-square quantile level.
    pub gate: f64,
    /// Detection probability used to update unmatched tracks with a miss
    /// likelihood. `None` leaves them with the prediction only.
    #[serde(default)]
    pub miss_detection_probability: Option<f64>,
}

impl Default for ExistenceConfig {
    fn default() -> Self {
        Self {
            survival: 0.9,
            birth: 0.0,
            precision: 0.5,
            drop_threshold: 0.3,
            report_threshold: 0.5,
            gate: 0.95,
            miss_detection_probability: None,
        }
    }
}

impl ExistenceConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [self.survival, self.birth, self.drop_threshold, self.report_threshold];
        if unit.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("existence probabilities and thresholds must lie in [0, 1]".into()));
        }
        if !(self.precision > 0.0 && self.precision < 1.0) {
            return Err(Error::InvalidConfig("precision prior must lie strictly inside (0, 1)".into()));
        }
        if !(self.gate > 0.0 && self.gate < 1.0) {
            return Err(Error::InvalidConfig("gate quantile must lie in (0, 1)".into()));
        }
        if self.miss_detection_probability.is_some_and(|pd| !(0.0..=1.0).contains(&pd)) {
            return Err(Error::InvalidConfig("miss detection probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn existence_predict(p: f64, cfg: &ExistenceConfig) -> f64 {
    (cfg.survival * p + cfg.birth * (1.0 - p)).clamp(0.0, 1.0)
}

/// Bayes update with calibrated confidence `q`; the detector prior `π`
/// divides out of the likelihood.
pub fn existence_update(p_pred: f64, q: f64, cfg: &ExistenceConfig) -> f64 {
    let q = q.clamp(0.0, 1.0);
    let pi = cfg.precision;
    let a = q / pi * p_pred;
    let b = (1.0 - q) / (1.0 - pi) * (1.0 - p_pred);
    if a + b > 0.0 {
        (a / (a + b)).clamp(0.0, 1.0)
    } else {
        p_pred
    }
}

/// Existence after a frame without a matching detection, given detection
/// probability `pd`: `p(1-pd) / (p(1-pd) + 1 - p)`.
pub fn existence_miss_update(p_pred: f64, pd: f64) -> f64 {
    let a = p_pred * (1.0 - pd);
    let b = 1.0 - p_pred;
    if a + b > 0.0 {
        (a / (a + b)).clamp(0.0, 1.0)
    } else {
        p_pred
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_and_identity() {
        let c = ExistenceConfig::default();
        assert_eq!(existence_update(0.4, 1.0, &c), 1.0);
        assert_eq!(existence_update(0.4, 0.0, &c), 0.0);
        assert!((existence_update(0.4, c.precision, &c) - 0.4).abs() < 1e-15);
        let same = ExistenceConfig { survival: 0.7, birth: 0.7, ..c };
        assert!((existence_predict(0.1, &same) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn miss_update_lowers_existence() {
        assert_eq!(existence_miss_update(0.6, 0.0), 0.6);
        assert!((existence_miss_update(0.5, 0.8) - 0.1 / 0.6).abs() < 1e-15);
        assert_eq!(existence_miss_update(0.5, 1.0), 0.0);
        assert_eq!(existence_miss_update(1.0, 0.5), 1.0);
    }

    #[test]
    fn invalid_prior_rejected() {
        assert!(ExistenceConfig { precision: 1.0, ..ExistenceConfig::default() }.validate().is_err());
        assert!(ExistenceConfig { precision: 0.0, ..ExistenceConfig::default() }.validate().is_err());
        let bad_pd = ExistenceConfig { miss_detection_probability: Some(1.5), ..ExistenceConfig::default() };
        assert!(bad_pd.validate().is_err());
    }
}
