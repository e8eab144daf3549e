//! Tracking by detection: constant-acceleration Kalman filter with
//! per-detection observation noise, a discrete existence filter driven by
//! detection confidence, NIS-gated Hungarian association and track
//! lifecycle management.

pub mod existence;
pub mod hungarian;
pub mod kalman;
pub mod tracker;

pub use existence::{existence_miss_update, existence_predict, existence_update, ExistenceConfig};
pub use hungarian::hungarian;
pub use kalman::{GaussianState, KalmanConfig, OBS_DIM, STATE_DIM};
pub use tracker::{
    assign_gated, associate, prepare_observations, run_tracker, Association, Observation, StepOutput, TrackRecord,
    TrackState, Tracker, TrackerConfig, TrackingRun,
};
