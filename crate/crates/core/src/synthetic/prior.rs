use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use crate::error::{invalid, Result};

/// Grid resolution of the inverse-CDF table.
const TABLE_POINTS: usize = 4097;

/// Beta-shaped density `x^(alpha-1) (1-x)^(beta-1)` with a mixture weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaComponent {
    pub weight: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Mixture of beta-shaped densities on `[0, 1]`, sampled by inverting a
/// tabulated CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMixture {
    components: Vec<BetaComponent>,
    x: Vec<f64>,
    cdf: Vec<f64>,
}

/// Default confidence prior: equal mixture of Beta(1.5, 4) and Beta(4, 1.5).
pub fn default_confidence_components() -> Vec<BetaComponent> {
    vec![BetaComponent { weight: 0.5, alpha: 1.5, beta: 4.0 }, BetaComponent { weight: 0.5, alpha: 4.0, beta: 1.5 }]
}

impl BetaMixture {
    pub fn new(components: Vec<BetaComponent>) -> Result<Self> {
        if components.is_empty() {
            return invalid("a beta mixture needs at least one component");
        }
        if components.iter().any(|c| !(c.weight >= 0.0 && c.alpha > 0.0 && c.beta > 0.0)) {
            return invalid("beta mixture weights must be nonnegative and shapes positive");
        }
        let total_w: f64 = components.iter().map(|c| c.weight).sum();
        if !(total_w > 0.0) {
            return invalid("beta mixture weights sum to zero");
        }
        // Midpoint rule per cell keeps integrable endpoint singularities finite.
        let n = TABLE_POINTS;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut cdf = vec![0.0; n];
        let mut norms = Vec::with_capacity(components.len());
        let dens = |c: &BetaComponent, v: f64| v.powf(c.alpha - 1.0) * (1.0 - v).powf(c.beta - 1.0);
        for c in &components {
            let mut s = 0.0;
            for i in 1..n {
                s += dens(c, 0.5 * (x[i] + x[i - 1]));
            }
            norms.push(s);
        }
        for i in 1..n {
            let m = 0.5 * (x[i] + x[i - 1]);
            let mass: f64 = components.iter().zip(&norms).map(|(c, z)| c.weight / total_w * dens(c, m) / z).sum();
            cdf[i] = cdf[i - 1] + mass;
        }
        let last = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= last);
        Ok(Self { components, x, cdf })
    }

    pub fn single(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(vec![BetaComponent { weight: 1.0, alpha, beta }])
    }

    pub fn components(&self) -> &[BetaComponent] {
        &self.components
    }

    /// Inverse CDF by linear interpolation in the table.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        (self.x[i - 1] + t * (self.x[i] - self.x[i - 1])).clamp(1e-6, 1.0 - 1e-6)
    }

    pub fn sample(&self, rng: &mut CounterRng) -> f64 {
        self.quantile(rng.uniform())
    }
}
