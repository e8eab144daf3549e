//! Seeded generators with known miscalibration: matched detection datasets
//! and multi-frame tracking scenarios.

pub mod detection;
pub mod prior;
pub mod rng;
pub mod scenario;

pub use detection::{
    generate_detection_dataset, generate_detection_dataset_with, generate_regression_dataset, BoxSampler,
    ConfidenceLink, DetectorDistortion, NoiseFamily, VarianceDistortion,
};
pub use prior::{BetaComponent, BetaMixture};
pub use rng::CounterRng;
pub use scenario::{generate_tracking_sequence, ScenarioConfig};
