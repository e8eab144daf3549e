//! Bayesian confidence calibration with a mean-field Gaussian variational
//! posterior over scaling-calibrator parameters, trained by stochastic
//! variational inference.

use serde::{Deserialize, Serialize};

use super::binning::BinningScheme;
use super::scaling::{prob_from_lr, Design, ScalingKind, ScalingLink};
use crate::error::{invalid, Error, Result};
use crate::model::{Feature, FeatureValues, MatchedDataset};
use crate::synthetic::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesianBase {
    Logistic,
    LogisticMvIndep,
    LogisticMvDep,
    Beta,
    BetaMvIndep,
}

impl BayesianBase {
    pub fn kind(self) -> ScalingKind {
        match self {
            BayesianBase::Logistic | BayesianBase::LogisticMvIndep => ScalingKind::Logistic,
            BayesianBase::LogisticMvDep => ScalingKind::LogisticDependent,
            BayesianBase::Beta | BayesianBase::BetaMvIndep => ScalingKind::Beta,
        }
    }

    fn check(self, features: &[Feature]) -> Result<()> {
        let multi = features.len() > 1;
        let want_multi = !matches!(self, BayesianBase::Logistic | BayesianBase::Beta);
        if multi != want_multi {
            return invalid(format!("{self:?} calibration is incompatible with {} features", features.len()));
        }
        Ok(())
    }
}

/// Per-parameter Gaussian `N(mean, exp(log_sigma)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub base: BayesianBase,
    pub features: Vec<Feature>,
    pub mean: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviConfig {
    /// Optimizer steps; each step uses one minibatch.
    pub iterations: usize,
    pub mc_samples: usize,
    /// Initial Adam step size, decayed linearly to a tenth.
    pub step_size: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub init_sigma: f64,
}

impl Default for SviConfig {
    fn default() -> Self {
        Self { iterations: 1500, mc_samples: 8, step_size: 0.02, batch_size: 1024, seed: 0, init_sigma: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SviFit {
    pub posterior: VariationalPosterior,
    /// Per-step Monte Carlo ELBO estimate.
    pub elbo_trace: Vec<f64>,
}

/// Maximizes the ELBO with reparameterized gradients and Adam.
pub fn fit_svi(base: BayesianBase, ds: &MatchedDataset, features: &[Feature], cfg: &SviConfig) -> Result<SviFit> {
    ds.require_both_classes()?;
    base.check(features)?;
    if cfg.mc_samples == 0 || cfg.iterations == 0 || cfg.batch_size == 0 {
        return invalid("SVI needs positive iterations, mc_samples and batch_size");
    }
    let design = Design::new(ds, base.kind(), features)?;
    let link = design.link;
    let np = link.n_params();
    let prior = link.prior_scales();
    let n = design.n();
    let batch = cfg.batch_size.min(n);
    let scale = n as f64 / batch as f64;

    let mut mu = link.identity_params();
    let mut rho = vec![cfg.init_sigma.ln(); np];
    let mut rng = CounterRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; 2 * np];
    let mut v = vec![0.0; 2 * np];
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut theta = vec![0.0; np];
    let mut eps_draw = vec![0.0; np];
    let mut g_theta = vec![0.0; np];

    for t in 0..cfg.iterations {
        let rows: Vec<usize> = if batch == n {
            order.clone()
        } else {
            if cursor + batch > n {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            cursor += batch;
            order[cursor - batch..cursor].to_vec()
        };
        let mut grad = vec![0.0; 2 * np];
        let mut loglik = 0.0;
        for _ in 0..cfg.mc_samples {
            for j in 0..np {
                eps_draw[j] = rng.normal();
                theta[j] = mu[j] + rho[j].exp() * eps_draw[j];
            }
            g_theta.iter_mut().for_each(|g| *g = 0.0);
            let nll = design.nll_grad(&theta, rows.iter().copied(), &mut g_theta);
            loglik -= scale * nll;
            for j in 0..np {
                let gj = -scale * g_theta[j];
                grad[j] += gj;
                grad[np + j] += gj * rho[j].exp() * eps_draw[j];
            }
        }
        let s = cfg.mc_samples as f64;
        let mut kl = 0.0;
        for j in 0..np {
            let sig = rho[j].exp();
            let p = prior[j];
            kl += (p / sig).ln() + (sig * sig + mu[j] * mu[j]) / (2.0 * p * p) - 0.5;
            grad[j] = grad[j] / s - mu[j] / (p * p);
            grad[np + j] = grad[np + j] / s + 1.0 - sig * sig / (p * p);
        }
        let elbo = loglik / s - kl;
        if !elbo.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("ELBO at SVI step {t}")));
        }
        trace.push(elbo);
        let lr = cfg.step_size * (1.0 - 0.9 * t as f64 / cfg.iterations as f64);
        let tt = (t + 1) as i32;
        for j in 0..2 * np {
            m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
            v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
            let mh = m[j] / (1.0 - b1.powi(tt));
            let vh = v[j] / (1.0 - b2.powi(tt));
            let step = lr * mh / (vh.sqrt() + eps);
            if j < np {
                mu[j] += step;
            } else {
                rho[j - np] += step;
            }
        }
    }
    Ok(SviFit {
        posterior: VariationalPosterior { base, features: features.to_vec(), mean: mu, log_sigma: rho },
        elbo_trace: trace,
    })
}

/// Moving average with the given window (shorter at the start).
pub fn smooth(trace: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(trace.len());
    let mut acc = 0.0;
    for i in 0..trace.len() {
        acc += trace[i];
        if i >= w {
            acc -= trace[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Posterior-predictive draws for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSample {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub hpdi: (f64, f64),
}

impl VariationalPosterior {
    pub fn link(&self) -> ScalingLink {
        ScalingLink { kind: self.base.kind(), k: self.features.len() }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|v| v.exp()).collect()
    }

    /// `t` parameter vectors drawn from the posterior.
    pub fn draw_params(&self, t: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = CounterRng::new(seed);
        (0..t)
            .map(|_| self.mean.iter().zip(&self.log_sigma).map(|(m, s)| m + s.exp() * rng.normal()).collect())
            .collect()
    }

    fn outputs(&self, draws: &[Vec<f64>], values: &FeatureValues) -> Vec<f64> {
        let link = self.link();
        let s = link.inputs(values, &self.features);
        draws.iter().map(|p| prob_from_lr(link.lr(p, &s))).collect()
    }

    /// Calibrated confidences under `t` posterior draws.
    pub fn predict(&self, values: &FeatureValues, t: usize, tau: f64, seed: u64) -> Result<PredictiveSample> {
        if t == 0 {
            return invalid("at least one posterior draw is required");
        }
        let draws = self.draw_params(t, seed);
        summarize(self.outputs(&draws, values), tau)
    }

    /// Predictive samples for every dataset entry, sharing one set of draws.
    pub fn predict_dataset(&self, ds: &MatchedDataset, t: usize, tau: f64, seed: u64) -> Result<Vec<PredictiveSample>> {
        if t == 0 {
            return invalid("at least one posterior draw is required");
        }
        let draws = self.draw_params(t, seed);
        (0..ds.len()).map(|i| summarize(self.outputs(&draws, &ds.features(i)), tau)).collect()
    }

    /// Calibrated confidence as the posterior-predictive mean.
    pub fn transform(&self, values: &FeatureValues, t: usize, seed: u64) -> f64 {
        let draws = self.draw_params(t.max(1), seed);
        let out = self.outputs(&draws, values);
        out.iter().sum::<f64>() / out.len() as f64
    }
}

const HPDI_TIE_TOL: f64 = 1e-12;

fn summarize(samples: Vec<f64>, tau: f64) -> Result<PredictiveSample> {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let hpdi = hpdi(&samples, tau)?;
    Ok(PredictiveSample { samples, mean, hpdi })
}

/// Narrowest window holding `ceil(tau * T)` of the sorted samples; widths
/// within 1e-12 count as ties, which go to the lowest start.
pub fn hpdi(samples: &[f64], tau: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return invalid(format!("HPDI level {tau} outside (0,1]"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let t = s.len();
    let m = ((tau * t as f64 - 1e-9).ceil() as usize).clamp(1, t);
    let mut best = (0, f64::INFINITY);
    for i in 0..=t - m {
        let w = s[i + m - 1] - s[i];
        if w < best.1 - HPDI_TIE_TOL {
            best = (i, w);
        }
    }
    Ok((s[best.0], s[best.0 + m - 1]))
}

/// Ground-truth precision per sample: the empirical precision of its
/// uncalibrated-confidence bin.
pub fn bin_precision_truth(ds: &MatchedDataset, bins: usize) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::NoSamples);
    }
    let scheme = BinningScheme::uniform(1, bins, 0);
    scheme.validate()?;
    let mut n = vec![0usize; bins];
    let mut pos = vec![0usize; bins];
    let idx: Vec<usize> = ds.samples.iter().map(|s| scheme.bin_of(0, s.confidence)).collect();
    for (s, &b) in ds.samples.iter().zip(&idx) {
        n[b] += 1;
        pos[b] += usize::from(s.matched);
    }
    Ok(idx.iter().map(|&b| pos[b] as f64 / n[b] as f64).collect())
}

/// Fraction of ground-truth precisions inside the predicted intervals.
pub fn picp_from(truth: &[f64], preds: &[PredictiveSample]) -> Result<f64> {
    if truth.is_empty() || truth.len() != preds.len() {
        return invalid("truth and prediction counts differ or are empty");
    }
    let hit = truth.iter().zip(preds).filter(|(t, p)| p.hpdi.0 <= **t && **t <= p.hpdi.1).count();
    Ok(hit as f64 / truth.len() as f64)
}

pub fn mpiw_from(preds: &[PredictiveSample]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok(preds.iter().map(|p| p.hpdi.1 - p.hpdi.0).sum::<f64>() / preds.len() as f64)
}

/// Prediction-interval coverage probability at level `tau`.
pub fn picp(
    ds: &MatchedDataset,
    posterior: &VariationalPosterior,
    tau: f64,
    truth_bins: usize,
    t: usize,
    seed: u64,
) -> Result<f64> {
    let truth = bin_precision_truth(ds, truth_bins)?;
    let preds = posterior.predict_dataset(ds, t, tau, seed)?;
    picp_from(&truth, &preds)
}

/// Mean width of the HPDI at level `tau`.
pub fn mpiw(ds: &MatchedDataset, posterior: &VariationalPosterior, tau: f64, t: usize, seed: u64) -> Result<f64> {
    mpiw_from(&posterior.predict_dataset(ds, t, tau, seed)?)
}
