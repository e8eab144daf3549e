use serde::{Deserialize, Serialize};

use super::prior::{default_confidence_components, BetaMixture};
use super::rng::CounterRng;
use crate::error::{invalid, Result};
use crate::model::{BoundingBox, CalibrationSample, ImageSize, MatchedDataset};
use crate::regression::RegressionDataset;
use crate::special::{logit, sigmoid};

/// True match probability as a function of the reported confidence and the
/// normalized box center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceLink {
    Identity,
    /// `sigmoid(w·logit(p) + delta + gx·(cx - ½) + gy·(cy - ½))`.
    Logistic {
        w: f64,
        delta: f64,
        #[serde(default)]
        position: Option<[f64; 2]>,
    },
    /// `sigmoid(a·ln p - b·ln(1-p) + c)`.
    Beta {
        a: f64,
        b: f64,
        c: f64,
    },
}

impl ConfidenceLink {
    pub fn probability(&self, p: f64, cx: f64, cy: f64) -> f64 {
        match self {
            ConfidenceLink::Identity => p,
            ConfidenceLink::Logistic { w, delta, position } => {
                let pos = position.map_or(0.0, |g| g[0] * (cx - 0.5) + g[1] * (cy - 0.5));
                sigmoid(w * logit(p, 1e-6) + delta + pos)
            }
            ConfidenceLink::Beta { a, b, c } => {
                let q = p.clamp(1e-6, 1.0 - 1e-6);
                sigmoid(a * q.ln() - b * (1.0 - q).ln() + c)
            }
        }
    }
}

/// True residual scale relative to the reported standard deviation:
/// `sigma_true = factor(mu) · sigma_reported`, so variance scaling recovers
/// `factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceDistortion {
    None,
    Constant {
        factor: f64,
    },
    /// `1 + amplitude·sin(2π·mu / period)` with `mu` the true coordinate.
    MeanDependent {
        amplitude: f64,
        period: f64,
    },
}

impl VarianceDistortion {
    pub fn factor(&self, mu: f64) -> f64 {
        match self {
            VarianceDistortion::None => 1.0,
            VarianceDistortion::Constant { factor } => *factor,
            VarianceDistortion::MeanDependent { amplitude, period } => {
                1.0 + amplitude * (2.0 * std::f64::consts::PI * mu / period).sin()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VarianceDistortion::Constant { factor } if !(*factor > 0.0) => invalid("variance factor must be positive"),
            VarianceDistortion::MeanDependent { amplitude, period } if !(amplitude.abs() < 1.0 && *period > 0.0) => {
                invalid("mean-dependent profile needs |amplitude| < 1 and a positive period")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Cauchy,
}

/// Miscalibration applied by the synthetic detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorDistortion {
    pub link: ConfidenceLink,
    pub variance: VarianceDistortion,
    pub noise: NoiseFamily,
    /// Correlation between the standardized width and height residuals.
    pub wh_correlation: f64,
}

impl Default for DetectorDistortion {
    fn default() -> Self {
        Self {
            link: ConfidenceLink::Identity,
            variance: VarianceDistortion::None,
            noise: NoiseFamily::Gaussian,
            wh_correlation: 0.0,
        }
    }
}

impl DetectorDistortion {
    pub fn validate(&self) -> Result<()> {
        self.variance.validate()?;
        if !(self.wh_correlation.abs() < 1.0) {
            return invalid("width/height correlation must lie in (-1, 1)");
        }
        Ok(())
    }
}

/// Ground-truth box and reported-uncertainty model in pixels. The reported
/// standard deviation of a coordinate is
/// `(sigma_floor + sigma_slope · value) · exp(sigma_jitter · N(0,1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxSampler {
    pub image: ImageSize,
    pub margin: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub sigma_floor: f64,
    pub sigma_slope: f64,
    pub sigma_jitter: f64,
}

impl Default for BoxSampler {
    fn default() -> Self {
        Self {
            image: ImageSize { width: 1000.0, height: 1000.0 },
            margin: 100.0,
            min_size: 20.0,
            max_size: 200.0,
            sigma_floor: 0.5,
            sigma_slope: 0.02,
            sigma_jitter: 0.1,
        }
    }
}

struct Draw {
    confidence: f64,
    gt: BoundingBox,
    det: BoundingBox,
    var: [f64; 4],
}

fn draw(rng: &mut CounterRng, prior: &BetaMixture, dist: &DetectorDistortion, bs: &BoxSampler) -> Draw {
    let confidence = prior.sample(rng);
    let gt = [
        rng.uniform_range(bs.margin, bs.image.width - bs.margin),
        rng.uniform_range(bs.margin, bs.image.height - bs.margin),
        rng.uniform_range(bs.min_size, bs.max_size),
        rng.uniform_range(bs.min_size, bs.max_size),
    ];
    let mut e = [0.0; 4];
    for v in e.iter_mut() {
        *v = match dist.noise {
            NoiseFamily::Gaussian => rng.normal(),
            NoiseFamily::Cauchy => rng.cauchy(),
        };
    }
    let rho = dist.wh_correlation;
    e[3] = rho * e[2] + (1.0 - rho * rho).sqrt() * e[3];
    let mut det = [0.0; 4];
    let mut var = [0.0; 4];
    for d in 0..4 {
        let sd = (bs.sigma_floor + bs.sigma_slope * gt[d]) * (bs.sigma_jitter * rng.normal()).exp();
        var[d] = sd * sd;
        det[d] = gt[d] + dist.variance.factor(gt[d]) * sd * e[d];
    }
    det[2] = det[2].max(1.0);
    det[3] = det[3].max(1.0);
    Draw { confidence, gt: BoundingBox::from_array(gt), det: BoundingBox::from_array(det), var }
}

/// `n` detections with match flags drawn from the link; matched samples carry
/// their ground-truth box. Sample `i` uses child stream `i` of the seed.
pub fn generate_detection_dataset_with(
    dist: &DetectorDistortion,
    sampler: &BoxSampler,
    prior: &BetaMixture,
    n: usize,
    seed: u64,
) -> Result<MatchedDataset> {
    dist.validate()?;
    let root = CounterRng::new(seed);
    let samples = (0..n)
        .map(|i| {
            let mut rng = root.stream(i as u64);
            let d = draw(&mut rng, prior, dist, sampler);
            let p =
                dist.link.probability(d.confidence, d.det.cx / sampler.image.width, d.det.cy / sampler.image.height);
            let matched = rng.bernoulli(p);
            CalibrationSample {
                confidence: d.confidence,
                label: 0,
                bbox: d.det,
                matched,
                variances: Some(d.var),
                gt_box: matched.then_some(d.gt),
            }
        })
        .collect();
    Ok(MatchedDataset::new(samples, 0.5, Some(sampler.image)))
}

/// [`generate_detection_dataset_with`] with the default box sampler and
/// confidence prior.
pub fn generate_detection_dataset(dist: &DetectorDistortion, n: usize, seed: u64) -> Result<MatchedDataset> {
    let prior = BetaMixture::new(default_confidence_components())?;
    generate_detection_dataset_with(dist, &BoxSampler::default(), &prior, n, seed)
}

/// `n` matched boxes as a regression dataset (every sample has ground truth).
pub fn generate_regression_dataset(
    dist: &DetectorDistortion,
    sampler: &BoxSampler,
    n: usize,
    seed: u64,
) -> Result<RegressionDataset> {
    dist.validate()?;
    let prior = BetaMixture::new(default_confidence_components())?;
    let root = CounterRng::new(seed);
    let (mut mean, mut var, mut gt) = (Vec::with_capacity(4 * n), Vec::with_capacity(4 * n), Vec::with_capacity(4 * n));
    for i in 0..n {
        let d = draw(&mut root.stream(i as u64), &prior, dist, sampler);
        mean.extend(d.det.to_array());
        var.extend(d.var);
        gt.extend(d.gt.to_array());
    }
    RegressionDataset::new(4, mean, var, gt)
}
