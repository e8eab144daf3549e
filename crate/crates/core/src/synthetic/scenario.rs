use serde::{Deserialize, Serialize};

use super::detection::{DetectorDistortion, NoiseFamily};
use super::prior::BetaMixture;
use super::rng::CounterRng;
use crate::error::{invalid, Result};
use crate::model::{BoundingBox, Detection, Frame, GroundTruthObject, ImageSize};

/// Smallest reported standard deviation in pixels.
pub const SIGMA_FLOOR: f64 = 0.1;

/// Multi-frame scenario: objects move with constant velocity plus white
/// velocity jitter. Within `wall_zone` pixels of the border a spring
/// acceleration `wall_stiffness · depth` pushes them back inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub image_size: ImageSize,
    pub objects: usize,
    pub frames: usize,
    /// Standard deviation of the initial per-axis speed, pixels per frame.
    pub initial_speed: f64,
    /// Standard deviation of the per-frame velocity change.
    pub velocity_jitter: f64,
    pub wall_zone: f64,
    pub wall_stiffness: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub detection_probability: f64,
    /// Expected false positives per frame per ground-truth object.
    pub false_positive_rate: f64,
    /// True residual standard deviation as a fraction of the box extent.
    pub box_noise: f64,
    /// Beta shape `(alpha, beta)` of true-positive confidences.
    pub tp_confidence: [f64; 2],
    /// Beta shape of false-positive confidences.
    pub fp_confidence: [f64; 2],
    pub labels: u32,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            image_size: ImageSize { width: 1280.0, height: 720.0 },
            objects: 8,
            frames: 100,
            initial_speed: 3.0,
            velocity_jitter: 0.2,
            wall_zone: 150.0,
            wall_stiffness: 0.02,
            min_size: 40.0,
            max_size: 120.0,
            detection_probability: 0.9,
            false_positive_rate: 0.1,
            box_noise: 0.03,
            tp_confidence: [8.0, 2.0],
            fp_confidence: [2.0, 5.0],
            labels: 1,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Many false positives with overconfident scores.
    pub fn fp_flood() -> Self {
        Self { false_positive_rate: 1.0, fp_confidence: [5.0, 4.0], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.detection_probability) || !(0.0..=1.0).contains(&self.false_positive_rate) {
            return invalid("detection probability and false-positive rate must lie in [0, 1]");
        }
        if self.objects == 0 || self.frames == 0 || self.labels == 0 {
            return invalid("scenario needs at least one object, frame and label");
        }
        if !(self.min_size > 0.0 && self.max_size >= self.min_size) {
            return invalid("box size range must be positive and ordered");
        }
        if !(self.image_size.width > 2.0 * self.max_size && self.image_size.height > 2.0 * self.max_size) {
            return invalid("image must be larger than twice the largest box");
        }
        if self.box_noise < 0.0
            || self.initial_speed < 0.0
            || self.velocity_jitter < 0.0
            || self.wall_zone < 0.0
            || self.wall_stiffness < 0.0
        {
            return invalid("noise levels must be nonnegative");
        }
        Ok(())
    }
}

struct Object {
    pos: [f64; 2],
    vel: [f64; 2],
    size: [f64; 2],
}

fn wall_push(p: f64, lo: f64, hi: f64, zone: f64, k: f64) -> f64 {
    let inner_lo = lo + zone;
    let inner_hi = hi - zone;
    if p < inner_lo {
        k * (inner_lo - p)
    } else if p > inner_hi {
        -k * (p - inner_hi)
    } else {
        0.0
    }
}

fn bounce(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    if *p < lo {
        *p = 2.0 * lo - *p;
        *v = v.abs();
    } else if *p > hi {
        *p = 2.0 * hi - *p;
        *v = -v.abs();
    }
    *p = p.clamp(lo, hi);
}

/// Frames of ground truth and detections. Frame `t` draws from child stream
/// `t + 1` of the seed; stream 0 initializes the objects. The seed is the
/// function argument; `config.seed` is not consulted.
pub fn generate_tracking_sequence(config: &ScenarioConfig, dist: &DetectorDistortion, seed: u64) -> Result<Vec<Frame>> {
    config.validate()?;
    dist.validate()?;
    let tp_conf = BetaMixture::single(config.tp_confidence[0], config.tp_confidence[1])?;
    let fp_conf = BetaMixture::single(config.fp_confidence[0], config.fp_confidence[1])?;
    let root = CounterRng::new(seed);
    let (iw, ih) = (config.image_size.width, config.image_size.height);

    let mut init = root.stream(0);
    let mut objects: Vec<Object> = (0..config.objects)
        .map(|_| {
            let size = [
                init.uniform_range(config.min_size, config.max_size),
                init.uniform_range(config.min_size, config.max_size),
            ];
            Object {
                pos: [init.uniform_range(size[0], iw - size[0]), init.uniform_range(size[1], ih - size[1])],
                vel: [config.initial_speed * init.normal(), config.initial_speed * init.normal()],
                size,
            }
        })
        .collect();

    let noise = |rng: &mut CounterRng| match dist.noise {
        NoiseFamily::Gaussian => rng.normal(),
        NoiseFamily::Cauchy => rng.cauchy(),
    };

    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let mut rng = root.stream(t as u64 + 1);
        let frame_id = t as u64;
        if t > 0 {
            for o in objects.iter_mut() {
                let ext = [iw, ih];
                for a in 0..2 {
                    let (lo, hi) = (o.size[a] / 2.0, ext[a] - o.size[a] / 2.0);
                    let zone = config.wall_zone.min(0.5 * (hi - lo));
                    o.vel[a] += config.velocity_jitter * rng.normal()
                        + wall_push(o.pos[a], lo, hi, zone, config.wall_stiffness);
                    o.pos[a] += o.vel[a];
                }
                bounce(&mut o.pos[0], &mut o.vel[0], o.size[0] / 2.0, iw - o.size[0] / 2.0);
                bounce(&mut o.pos[1], &mut o.vel[1], o.size[1] / 2.0, ih - o.size[1] / 2.0);
            }
        }
        let mut ground_truths = Vec::with_capacity(objects.len());
        let mut detections = Vec::new();
        for (k, o) in objects.iter().enumerate() {
            let label = k as u32 % config.labels;
            let gt = BoundingBox::from_array([o.pos[0], o.pos[1], o.size[0], o.size[1]]);
            ground_truths.push(GroundTruthObject { label, bbox: gt, frame_id, object_id: k as u64 + 1 });
            if !rng.bernoulli(config.detection_probability) {
                continue;
            }
            let g = gt.to_array();
            let extent = [o.size[0], o.size[1], o.size[0], o.size[1]];
            let mut det = [0.0; 4];
            let mut var = [0.0; 4];
            for d in 0..4 {
                let sd = (config.box_noise * extent[d]).max(SIGMA_FLOOR);
                var[d] = sd * sd;
                let resid =
                    if config.box_noise > 0.0 { dist.variance.factor(g[d]) * sd * noise(&mut rng) } else { 0.0 };
                det[d] = g[d] + resid;
            }
            det[2] = det[2].max(1.0);
            det[3] = det[3].max(1.0);
            detections.push(Detection {
                label,
                confidence: tp_conf.sample(&mut rng),
                bbox: BoundingBox::from_array(det),
                variances: Some(var),
                frame_id,
                detection_id: 0,
            });
        }
        let n_fp = rng.poisson(config.false_positive_rate * config.objects as f64);
        for _ in 0..n_fp {
            let w = rng.uniform_range(config.min_size, config.max_size);
            let h = rng.uniform_range(config.min_size, config.max_size);
            let b = [rng.uniform_range(w / 2.0, iw - w / 2.0), rng.uniform_range(h / 2.0, ih - h / 2.0), w, h];
            let extent = [w, h, w, h];
            let mut var = [0.0; 4];
            for d in 0..4 {
                var[d] = (config.box_noise * extent[d]).max(SIGMA_FLOOR).powi(2);
            }
            detections.push(Detection {
                label: rng.below(config.labels as usize) as u32,
                confidence: fp_conf.sample(&mut rng),
                bbox: BoundingBox::from_array(b),
                variances: Some(var),
                frame_id,
                detection_id: 0,
            });
        }
        for (i, d) in detections.iter_mut().enumerate() {
            d.detection_id = i as u64;
        }
        frames.push(Frame { frame_id, detections, ground_truths });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = ScenarioConfig { frames: 20, ..ScenarioConfig::default() };
        let d = DetectorDistortion::default();
        let a = generate_tracking_sequence(&cfg, &d, 4).unwrap();
        assert_eq!(a, generate_tracking_sequence(&cfg, &d, 4).unwrap());
        assert_eq!(a.len(), 20);
        for f in &a {
            assert_eq!(f.ground_truths.len(), cfg.objects);
            for det in &f.detections {
                det.validate().unwrap();
            }
        }
    }

    #[test]
    fn rates_validated() {
        let cfg = ScenarioConfig { detection_probability: 1.5, ..ScenarioConfig::default() };
        assert!(generate_tracking_sequence(&cfg, &DetectorDistortion::default(), 0).is_err());
    }
}
