//! Calibration of probabilistic object detections and a tracking-by-detection
//! pipeline that consumes the calibrated uncertainties.
//!
//! * [`model`]: boxes, detections, IoU matching and the matched dataset.
//! * [`confidence`]: confidence metrics and calibrators.
//! * [`regression`]: spatial-uncertainty metrics and calibrators.
//! * [`tracking`]: Kalman/existence filtering, association, track lifecycle.
//! * [`mot`]: CLEAR-MOT and identity metrics.
//! * [`synthetic`]: seeded generators with known distortions.
//! * [`io`]: JSONL records, model files and atomic writes.

pub mod confidence;
pub mod error;
pub mod io;
pub mod model;
pub mod mot;
pub mod optim;
pub mod regression;
pub mod special;
pub mod synthetic;
pub mod tracking;

pub use error::{Error, Result};
