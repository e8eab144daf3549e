//! Semantic-confidence calibration: metrics, histogram binning, scaling
//! calibrators and their Bayesian variants.

pub mod bayesian;
pub mod binning;
pub mod calibrator;
pub mod histogram;
pub mod metrics;
pub mod scaling;

pub use bayesian::{fit_svi, hpdi, BayesianBase, PredictiveSample, SviConfig, VariationalPosterior};
pub use binning::BinningScheme;
pub use calibrator::{BayesianCalibrator, ConfidenceCalibrator};
pub use histogram::{fit_histogram, HistogramBinningModel};
pub use metrics::{auprc, brier, dece, ece, mce, nll_bernoulli, reliability, ReliabilityBin};
pub use scaling::{
    fit_beta, fit_beta_dependent, fit_logistic, fit_logistic_dependent, fit_scaling, ScalingKind, ScalingModel,
};
