//! Logistic and beta calibration in univariate, conditionally independent
//! and conditionally dependent multivariate forms.
//!
//! Every model is a log-likelihood-ratio `lr(s; θ)` over an unconstrained
//! parameter vector `θ`; the calibrated confidence is `sigmoid(lr)`. Positive
//! quantities are stored as logarithms.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Feature, FeatureValues, MatchedDataset};
use crate::optim::{minimize, OptimResult, OptimizerConfig};
use crate::special::{log_sigmoid, logit, sigmoid};

/// Clamp applied to confidences and box features before logs.
pub const CONF_EPS: f64 = 1e-6;
const LR_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    Logistic,
    LogisticDependent,
    Beta,
    BetaDependent,
}

impl ScalingKind {
    fn uses_logit(self) -> bool {
        matches!(self, ScalingKind::Logistic | ScalingKind::LogisticDependent)
    }
}

/// Parameter layout of one scaling family over `k` features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalingLink {
    pub kind: ScalingKind,
    pub k: usize,
}

fn tri(k: usize) -> usize {
    k * (k + 1) / 2
}

impl ScalingLink {
    pub fn new(kind: ScalingKind, k: usize) -> Result<Self> {
        if k == 0 {
            return invalid("at least one feature is required");
        }
        if matches!(kind, ScalingKind::LogisticDependent | ScalingKind::BetaDependent) && k < 2 {
            return invalid("dependent calibration needs at least two features");
        }
        Ok(Self { kind, k })
    }

    pub fn n_params(&self) -> usize {
        let k = self.k;
        match self.kind {
            ScalingKind::Logistic => k + 1,
            ScalingKind::LogisticDependent => 2 * k + 2 * tri(k) + 1,
            ScalingKind::Beta => 2 * k + 1,
            ScalingKind::BetaDependent => 2 * (k + 1) + 2 * k + 1,
        }
    }

    /// Index of the bias term.
    pub fn bias_index(&self) -> usize {
        self.n_params() - 1
    }

    /// Parameters of the identity map on the confidence.
    pub fn identity_params(&self) -> Vec<f64> {
        let k = self.k;
        let mut p = vec![0.0; self.n_params()];
        match self.kind {
            ScalingKind::Logistic => {
                // Univariate weight is stored as log w; multivariate raw.
                if k > 1 {
                    p[0] = 1.0;
                }
            }
            ScalingKind::LogisticDependent => {
                p[0] = 0.5;
                p[k] = -0.5;
                let base = 2 * k;
                for half in 0..2 {
                    let off = base + half * tri(k);
                    for i in 0..k {
                        p[off + tri(i) + i] = 1.0;
                    }
                }
            }
            ScalingKind::Beta => {}
            ScalingKind::BetaDependent => {
                // alpha+ = (1, 2, 1, ..), alpha- = (2, 1, 1, ..), lambda = 1.
                p[1] = 2f64.ln();
                p[k + 1] = 2f64.ln();
            }
        }
        p
    }

    /// Preprocesses normalized features into the model input vector.
    pub fn inputs(&self, values: &FeatureValues, features: &[Feature]) -> Vec<f64> {
        features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let v = values[f.index()];
                if self.kind.uses_logit() {
                    if j == 0 {
                        logit(v, CONF_EPS)
                    } else {
                        v
                    }
                } else {
                    v.clamp(CONF_EPS, 1.0 - CONF_EPS)
                }
            })
            .collect()
    }

    pub fn lr(&self, p: &[f64], s: &[f64]) -> f64 {
        self.eval(p, s, None)
    }

    /// Writes `d lr / d θ` into `grad` and returns `lr`.
    pub fn lr_grad(&self, p: &[f64], s: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(p, s, Some(grad))
    }

    fn eval(&self, p: &[f64], s: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let k = self.k;
        match self.kind {
            ScalingKind::Logistic => {
                let delta = p[k];
                if k == 1 {
                    let w = p[0].exp();
                    if let Some(g) = grad {
                        g[0] = w * s[0];
                        g[1] = 1.0;
                    }
                    w * s[0] + delta
                } else {
                    let lr = (0..k).map(|i| p[i] * s[i]).sum::<f64>() + delta;
                    if let Some(g) = grad {
                        g[..k].copy_from_slice(&s[..k]);
                        g[k] = 1.0;
                    }
                    lr
                }
            }
            ScalingKind::LogisticDependent => {
                let mu_p = &p[0..k];
                let mu_n = &p[k..2 * k];
                let a_p = &p[2 * k..2 * k + tri(k)];
                let a_n = &p[2 * k + tri(k)..2 * k + 2 * tri(k)];
                let delta = p[2 * k + 2 * tri(k)];
                let mut gp = vec![0.0; k + tri(k)];
                let mut gn = vec![0.0; k + tri(k)];
                let want = grad.is_some();
                let q_p = quad_form(a_p, mu_p, s, k, want.then_some(&mut gp[..]));
                let q_n = quad_form(a_n, mu_n, s, k, want.then_some(&mut gn[..]));
                if let Some(g) = grad {
                    for i in 0..k {
                        g[i] = -0.5 * gp[i];
                        g[k + i] = 0.5 * gn[i];
                    }
                    for t in 0..tri(k) {
                        g[2 * k + t] = -0.5 * gp[k + t];
                        g[2 * k + tri(k) + t] = 0.5 * gn[k + t];
                    }
                    g[2 * k + 2 * tri(k)] = 1.0;
                }
                0.5 * (q_n - q_p) + delta
            }
            ScalingKind::Beta => {
                let mut lr = p[2 * k];
                let mut g = grad;
                for i in 0..k {
                    let (ls, l1s) = (s[i].ln(), (1.0 - s[i]).ln());
                    let (a, b) = if i == 0 { (p[0].exp(), p[1].exp()) } else { (p[2 * i], p[2 * i + 1]) };
                    lr += a * ls - b * l1s;
                    if let Some(g) = g.as_deref_mut() {
                        if i == 0 {
                            g[0] = a * ls;
                            g[1] = -b * l1s;
                        } else {
                            g[2 * i] = ls;
                            g[2 * i + 1] = -l1s;
                        }
                    }
                }
                if let Some(g) = g {
                    g[2 * k] = 1.0;
                }
                lr
            }
            ScalingKind::BetaDependent => beta_dependent(p, s, k, grad),
        }
    }

    /// Prior standard deviation per parameter: 10 on the bias, 1 elsewhere.
    pub fn prior_scales(&self) -> Vec<f64> {
        let mut v = vec![1.0; self.n_params()];
        v[self.bias_index()] = 10.0;
        v
    }
}

/// `‖Aᵀ(s − μ)‖²` with `A` lower triangular in packed row-major form. The
/// optional gradient holds `d/dμ` followed by `d/dA`.
fn quad_form(a: &[f64], mu: &[f64], s: &[f64], k: usize, grad: Option<&mut [f64]>) -> f64 {
    let x: Vec<f64> = (0..k).map(|i| s[i] - mu[i]).collect();
    let mut y = vec![0.0; k];
    for i in 0..k {
        for j in 0..=i {
            y[j] += a[tri(i) + j] * x[i];
        }
    }
    if let Some(g) = grad {
        for i in 0..k {
            let mut ay = 0.0;
            for j in 0..=i {
                ay += a[tri(i) + j] * y[j];
                g[k + tri(i) + j] = 2.0 * y[j] * x[i];
            }
            g[i] = -2.0 * ay;
        }
    }
    y.iter().map(|v| v * v).sum()
}

/// Multivariate beta (Libby–Novick) log-likelihood ratio.
fn beta_dependent(p: &[f64], s: &[f64], k: usize, grad: Option<&mut [f64]>) -> f64 {
    let la_p = &p[0..=k];
    let la_n = &p[k + 1..2 * k + 2];
    let ll_p = &p[2 * k + 2..3 * k + 2];
    let ll_n = &p[3 * k + 2..4 * k + 2];
    let delta = p[4 * k + 2];
    let a_p: Vec<f64> = la_p.iter().map(|v| v.exp()).collect();
    let a_n: Vec<f64> = la_n.iter().map(|v| v.exp()).collect();
    let l_p: Vec<f64> = ll_p.iter().map(|v| v.exp()).collect();
    let l_n: Vec<f64> = ll_n.iter().map(|v| v.exp()).collect();
    let star: Vec<f64> = s.iter().map(|v| v / (1.0 - v)).collect();
    let t: Vec<f64> = star.iter().map(|v| v.ln()).collect();
    let sum_p = 1.0 + (0..k).map(|j| l_p[j] * star[j]).sum::<f64>();
    let sum_n = 1.0 + (0..k).map(|j| l_n[j] * star[j]).sum::<f64>();
    let (lg_p, lg_n) = (sum_p.ln(), sum_n.ln());
    let tot_p: f64 = a_p.iter().sum();
    let tot_n: f64 = a_n.iter().sum();
    let mut lr = delta + tot_n * lg_n - tot_p * lg_p;
    for j in 0..k {
        lr += a_p[j + 1] * ll_p[j] - a_n[j + 1] * ll_n[j] + (a_p[j + 1] - a_n[j + 1]) * t[j];
    }
    if let Some(g) = grad {
        g[0] = -a_p[0] * lg_p;
        g[k + 1] = a_n[0] * lg_n;
        for j in 0..k {
            g[j + 1] = a_p[j + 1] * (ll_p[j] + t[j] - lg_p);
            g[k + 2 + j] = a_n[j + 1] * (-ll_n[j] - t[j] + lg_n);
            g[2 * k + 2 + j] = a_p[j + 1] - tot_p * l_p[j] * star[j] / sum_p;
            g[3 * k + 2 + j] = -a_n[j + 1] + tot_n * l_n[j] * star[j] / sum_n;
        }
        g[4 * k + 2] = 1.0;
    }
    lr
}

/// Calibrated probability from a log-likelihood ratio, strictly inside (0,1).
pub fn prob_from_lr(lr: f64) -> f64 {
    sigmoid(lr.clamp(-LR_LIMIT, LR_LIMIT))
}

/// Fitted scaling calibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingModel {
    pub kind: ScalingKind,
    /// Input features; the first is always the confidence.
    pub features: Vec<Feature>,
    /// Unconstrained parameters in the layout of [`ScalingLink`].
    pub params: Vec<f64>,
}

/// Weights and bias of a logistic model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Shape parameters of a beta model.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl ScalingModel {
    pub fn identity(kind: ScalingKind, features: &[Feature]) -> Result<Self> {
        let link = ScalingLink::new(kind, features.len())?;
        check_features(features)?;
        Ok(Self { kind, features: features.to_vec(), params: link.identity_params() })
    }

    pub fn link(&self) -> ScalingLink {
        ScalingLink { kind: self.kind, k: self.features.len() }
    }

    pub fn lr(&self, values: &FeatureValues) -> f64 {
        let link = self.link();
        link.lr(&self.params, &link.inputs(values, &self.features))
    }

    pub fn transform(&self, values: &FeatureValues) -> f64 {
        prob_from_lr(self.lr(values))
    }

    pub fn transform_dataset(&self, ds: &MatchedDataset) -> Vec<f64> {
        (0..ds.len()).map(|i| self.transform(&ds.features(i))).collect()
    }

    pub fn logistic_params(&self) -> Option<LogisticParams> {
        if self.kind != ScalingKind::Logistic {
            return None;
        }
        let k = self.features.len();
        let mut weights = self.params[..k].to_vec();
        if k == 1 {
            weights[0] = weights[0].exp();
        }
        Some(LogisticParams { weights, bias: self.params[k] })
    }

    pub fn beta_params(&self) -> Option<BetaParams> {
        if self.kind != ScalingKind::Beta {
            return None;
        }
        let k = self.features.len();
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        for i in 0..k {
            let (x, y) = (self.params[2 * i], self.params[2 * i + 1]);
            if i == 0 {
                a.push(x.exp());
                b.push(y.exp());
            } else {
                a.push(x);
                b.push(y);
            }
        }
        Some(BetaParams { a, b, c: self.params[2 * k] })
    }
}

fn check_features(features: &[Feature]) -> Result<()> {
    if features.first() != Some(&Feature::Confidence) {
        return invalid("the first calibration feature must be the confidence");
    }
    let mut seen = features.to_vec();
    seen.sort();
    seen.dedup();
    if seen.len() != features.len() {
        return invalid("duplicate calibration features");
    }
    Ok(())
}

/// Preprocessed design matrix (row-major) and targets.
pub(crate) struct Design {
    pub link: ScalingLink,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Design {
    pub fn new(ds: &MatchedDataset, kind: ScalingKind, features: &[Feature]) -> Result<Self> {
        check_features(features)?;
        let link = ScalingLink::new(kind, features.len())?;
        let mut x = Vec::with_capacity(ds.len() * link.k);
        for i in 0..ds.len() {
            x.extend(link.inputs(&ds.features(i), features));
        }
        Ok(Self { link, x, y: ds.targets() })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.link.k..(i + 1) * self.link.k]
    }

    /// Summed Bernoulli NLL over `rows`; adds `d/dθ` into `grad`.
    pub fn nll_grad(&self, p: &[f64], rows: impl Iterator<Item = usize>, grad: &mut [f64]) -> f64 {
        let mut dl = vec![0.0; p.len()];
        let mut total = 0.0;
        for i in rows {
            let lr = self.link.lr_grad(p, self.row(i), &mut dl);
            let y = self.y[i];
            total -= y * log_sigmoid(lr) + (1.0 - y) * log_sigmoid(-lr);
            let r = sigmoid(lr) - y;
            for (g, d) in grad.iter_mut().zip(&dl) {
                *g += r * d;
            }
        }
        total
    }
}

/// Maximum-likelihood fit of any scaling family, starting from the identity.
pub fn fit_scaling_report(
    ds: &MatchedDataset,
    kind: ScalingKind,
    features: &[Feature],
    cfg: &OptimizerConfig,
) -> Result<(ScalingModel, OptimResult)> {
    ds.require_both_classes()?;
    let design = Design::new(ds, kind, features)?;
    let n = design.n() as f64;
    let objective = |p: &[f64], g: &mut [f64]| {
        g.iter_mut().for_each(|v| *v = 0.0);
        let l = design.nll_grad(p, 0..design.n(), g);
        g.iter_mut().for_each(|v| *v /= n);
        l / n
    };
    let res = minimize(objective, design.link.identity_params(), cfg)?;
    if !res.loss.is_finite() {
        return Err(Error::NonFinite("scaling calibration loss".into()));
    }
    let model = ScalingModel { kind, features: features.to_vec(), params: res.x.clone() };
    Ok((model, res))
}

pub fn fit_scaling(
    ds: &MatchedDataset,
    kind: ScalingKind,
    features: &[Feature],
    cfg: &OptimizerConfig,
) -> Result<ScalingModel> {
    fit_scaling_report(ds, kind, features, cfg).map(|r| r.0)
}

pub fn fit_logistic(ds: &MatchedDataset, features: &[Feature], cfg: &OptimizerConfig) -> Result<ScalingModel> {
    fit_scaling(ds, ScalingKind::Logistic, features, cfg)
}

pub fn fit_logistic_dependent(
    ds: &MatchedDataset,
    features: &[Feature],
    cfg: &OptimizerConfig,
) -> Result<ScalingModel> {
    fit_scaling(ds, ScalingKind::LogisticDependent, features, cfg)
}

pub fn fit_beta(ds: &MatchedDataset, features: &[Feature], cfg: &OptimizerConfig) -> Result<ScalingModel> {
    fit_scaling(ds, ScalingKind::Beta, features, cfg)
}

pub fn fit_beta_dependent(ds: &MatchedDataset, features: &[Feature], cfg: &OptimizerConfig) -> Result<ScalingModel> {
    fit_scaling(ds, ScalingKind::BetaDependent, features, cfg)
}
