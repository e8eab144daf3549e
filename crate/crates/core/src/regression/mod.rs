//! Spatial-uncertainty calibration of Gaussian box predictions.

pub mod calibrator;
pub mod dataset;
pub mod distribution;
pub mod gp;
pub mod gp_models;
pub mod isotonic;
pub mod metrics;
pub mod variance;

pub use calibrator::RegressionCalibrator;
pub use dataset::RegressionDataset;
pub use distribution::{moment_match, CalibratedDistribution};
pub use gp::{fit_gp, GpConfig, GpScaleModel};
pub use gp_models::{
    estimate_covariance, fit_gp_beta, fit_gp_cauchy, fit_gp_normal, fit_gp_normal_joint, CovarianceModel, GpFamily,
    GpJointNormalModel, GpUnivariateModel,
};
pub use isotonic::{fit_isotonic, IsotonicModel};
pub use metrics::{
    c_qce, ence, interval_mpiw, interval_picp, m_qce, mean_c_qce, mean_pinball, nees, nll_gaussian, nll_gaussian_full,
    pinball, sgv, uce, GaussianPrediction, RegressionReport,
};
pub use variance::{fit_variance_scaling, VarianceScalingModel};
