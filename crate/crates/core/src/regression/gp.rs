//! Gaussian-process latent scale functions fitted by MAP on a subsample.
//!
//! Latents at the training inputs follow `vec(W) ~ N(0, K ⊗ B)` with `K` the
//! Gaussian-embedding kernel and `B` the coregionalization matrix. The fit
//! optimizes whitened coordinates `V` with `W = L_K V L_Bᵀ`, so the prior
//! term is `½‖V‖²`. Predictions use the posterior mean `k*ᵀ K⁻¹ W`. The
//! length scale is picked by golden-section search on held-out likelihood.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::{golden_section, minimize, OptimizerConfig};
use crate::synthetic::rng::CounterRng;

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;
pub const DEFAULT_MAX_POINTS: usize = 1024;
/// Smallest training set accepted by the GP calibrators.
pub const MIN_GP_SAMPLES: usize = 16;
/// Every fifth point is held out while searching the length scale.
const VALIDATION_FOLD: usize = 5;
const THETA_SPAN_DOWN: f64 = 30.0;
const THETA_SPAN_UP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Training points kept after seeded subsampling.
    pub max_points: usize,
    /// Length scale; the search is centered here when given.
    pub theta: Option<f64>,
    /// Golden-section steps over `log θ`; 0 keeps `theta` fixed.
    pub golden_iterations: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            max_points: DEFAULT_MAX_POINTS,
            theta: None,
            golden_iterations: 10,
            optimizer: OptimizerConfig { max_iter: 400, rel_tol: 1e-10, grad_tol: 1e-6, memory: 10 },
            seed: 0,
        }
    }
}

/// Kernel between two inputs with means `mi, mj` and diagonal variances
/// `vi, vj`: `θ^L |Σij|^{-1/2} exp(-½ Δμᵀ Σij⁻¹ Δμ)` with `Σij = Σi + Σj + θ²I`.
pub fn kernel(theta: f64, mi: &[f64], vi: &[f64], mj: &[f64], vj: &[f64]) -> f64 {
    let t2 = theta * theta;
    let lt = theta.ln();
    let mut acc = 0.0;
    for d in 0..mi.len() {
        let s = vi[d] + vj[d] + t2;
        acc += lt - 0.5 * s.ln() - 0.5 * (mi[d] - mj[d]).powi(2) / s;
    }
    acc.exp()
}

/// Fitted latent functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpScaleModel {
    pub input_dims: usize,
    pub outputs: usize,
    /// Training input means, row-major `M × input_dims`.
    pub train_mean: Vec<f64>,
    pub train_var: Vec<f64>,
    /// MAP latents at the training inputs, row-major `M × outputs`.
    pub latents: Vec<f64>,
    /// `K⁻¹ W`, row-major `M × outputs`.
    pub alpha: Vec<f64>,
    pub theta: f64,
    pub jitter: f64,
    /// Row-major `outputs × outputs`.
    pub coregionalization: Vec<f64>,
}

impl GpScaleModel {
    pub fn train_points(&self) -> usize {
        self.train_mean.len() / self.input_dims
    }

    /// Posterior-mean latents at a new input.
    pub fn predict(&self, mean: &[f64], var: &[f64]) -> Vec<f64> {
        let (l, p) = (self.input_dims, self.outputs);
        let mut out = vec![0.0; p];
        for m in 0..self.train_points() {
            let k = kernel(
                self.theta,
                mean,
                var,
                &self.train_mean[m * l..(m + 1) * l],
                &self.train_var[m * l..(m + 1) * l],
            );
            for (o, a) in out.iter_mut().zip(&self.alpha[m * p..(m + 1) * p]) {
                *o += k * a;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.train_points();
        if self.input_dims == 0
            || self.outputs == 0
            || self.train_mean.len() != m * self.input_dims
            || self.train_var.len() != m * self.input_dims
            || self.latents.len() != m * self.outputs
            || self.alpha.len() != m * self.outputs
            || self.coregionalization.len() != self.outputs * self.outputs
        {
            return invalid("GP model arrays have inconsistent sizes");
        }
        if !(self.theta > 0.0) {
            return invalid("GP length scale must be positive");
        }
        Ok(())
    }
}

/// Fitted model plus the MAP objective after every accepted optimizer step
/// of the final fit.
#[derive(Debug, Clone)]
pub struct GpFitReport {
    pub model: GpScaleModel,
    pub trace: Vec<f64>,
}

/// Sorted seeded subsample of `0..n` with at most `m` entries.
pub fn subsample(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n > m {
        CounterRng::new(seed).stream(0x6770).shuffle(&mut idx);
        idx.truncate(m);
        idx.sort_unstable();
    }
    idx
}

fn kernel_matrix(theta: f64, mean: &[f64], var: &[f64], l: usize) -> DMatrix<f64> {
    let m = mean.len() / l;
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = kernel(
                theta,
                &mean[i * l..(i + 1) * l],
                &var[i * l..(i + 1) * l],
                &mean[j * l..(j + 1) * l],
                &var[j * l..(j + 1) * l],
            );
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factor of `k + jitter·I`, escalating the jitter tenfold up to
/// [`MAX_JITTER`].
pub fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let mut jitter = DEFAULT_JITTER;
    loop {
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(ch) = a.cholesky() {
            return Ok((ch.unpack(), jitter));
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::NotPositiveDefinite(format!(
                "kernel matrix stays indefinite with jitter up to {MAX_JITTER}"
            )));
        }
    }
}

struct MapFit {
    v: DMatrix<f64>,
    loss: f64,
    trace: Vec<f64>,
}

fn map_fit<F>(lk: &DMatrix<f64>, lb: &DMatrix<f64>, v0: DMatrix<f64>, lik: &F, cfg: &OptimizerConfig) -> Result<MapFit>
where
    F: Fn(usize, &[f64], &mut [f64]) -> f64,
{
    let (m, p) = v0.shape();
    let mut w_row = vec![0.0; p];
    let mut g_row = vec![0.0; p];
    let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
        let v = DMatrix::from_column_slice(m, p, x);
        let w = lk * (&v * lb.transpose());
        let mut gw = DMatrix::zeros(m, p);
        let mut loss = 0.5 * v.norm_squared();
        for n in 0..m {
            for o in 0..p {
                w_row[o] = w[(n, o)];
                g_row[o] = 0.0;
            }
            loss += lik(n, &w_row, &mut g_row);
            for o in 0..p {
                gw[(n, o)] = g_row[o];
            }
        }
        let gv = lk.tr_mul(&gw) * lb + &v;
        grad.copy_from_slice(gv.as_slice());
        loss
    };
    let res = minimize(objective, v0.as_slice().to_vec(), cfg)?;
    Ok(MapFit { v: DMatrix::from_column_slice(m, p, &res.x), loss: res.loss, trace: res.trace })
}

/// Whitened coordinates reproducing latents `w` under factors `lk`, `lb`.
fn whiten(lk: &DMatrix<f64>, lb: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let a = lk.solve_lower_triangular(w).expect("Cholesky factor has a positive diagonal");
    lb.solve_lower_triangular(&a.transpose()).expect("Cholesky factor has a positive diagonal").transpose()
}

fn default_theta(mean: &[f64], var: &[f64], l: usize) -> f64 {
    let m = mean.len() / l;
    let mut spread = 0.0;
    for d in 0..l {
        let col: Vec<f64> = (0..m).map(|i| mean[i * l + d]).collect();
        let mu = col.iter().sum::<f64>() / m as f64;
        spread += (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m as f64).sqrt();
    }
    let sd = (var.iter().sum::<f64>() / var.len() as f64).sqrt();
    (0.5 * spread / l as f64).max(sd).max(1e-6)
}

/// Fits `outputs` latent functions over training inputs (`mean`, `var`,
/// row-major with `input_dims` columns). `lik(n, w, grad)` returns the
/// negative log-likelihood of training point `n` given its latent row `w`
/// and adds its gradient to `grad`.
pub fn fit_gp<F>(
    mean: Vec<f64>,
    var: Vec<f64>,
    input_dims: usize,
    outputs: usize,
    lik: F,
    cfg: &GpConfig,
) -> Result<GpFitReport>
where
    F: Fn(usize, &[f64], &mut [f64]) -> f64,
{
    let m = mean.len() / input_dims;
    if m < MIN_GP_SAMPLES {
        return invalid(format!("GP calibration needs at least {MIN_GP_SAMPLES} samples, got {m}"));
    }
    let p = outputs;
    let identity = DMatrix::<f64>::identity(p, p);
    let theta0 = cfg.theta.unwrap_or_else(|| default_theta(&mean, &var, input_dims));
    if !(theta0 > 0.0) {
        return invalid("GP length scale must be positive");
    }

    // Length-scale search: fit on four fifths of the points and score the
    // held-out fifth under the posterior-mean latents. Small sets fall back
    // to the MAP objective on all points.
    let l = input_dims;
    let split = m >= 2 * MIN_GP_SAMPLES * VALIDATION_FOLD;
    let (fit_idx, val_idx): (Vec<usize>, Vec<usize>) = if split {
        (0..m).partition(|n| n % VALIDATION_FOLD != VALIDATION_FOLD - 1)
    } else {
        ((0..m).collect(), Vec::new())
    };
    let rows = |idx: &[usize], src: &[f64]| -> Vec<f64> {
        idx.iter().flat_map(|&n| src[n * l..(n + 1) * l].to_vec()).collect()
    };
    let (fit_mean, fit_var) = (rows(&fit_idx, &mean), rows(&fit_idx, &var));
    let fit_lik = |n: usize, w: &[f64], g: &mut [f64]| lik(fit_idx[n], w, g);

    let mut w_keep = DMatrix::<f64>::zeros(fit_idx.len(), p);
    let mut best: Option<(f64, f64)> = None;
    let mut failure: Option<Error> = None;
    let mut eval = |log_theta: f64| -> f64 {
        let theta = log_theta.exp();
        let k = kernel_matrix(theta, &fit_mean, &fit_var, l);
        let (lk, _) = match cholesky_with_jitter(&k) {
            Ok(f) => f,
            Err(e) => {
                failure.get_or_insert(e);
                return f64::INFINITY;
            }
        };
        let v0 = whiten(&lk, &identity, &w_keep);
        let fit = match map_fit(&lk, &identity, v0, &fit_lik, &cfg.optimizer) {
            Ok(fit) => fit,
            Err(e) => {
                failure.get_or_insert(e);
                return f64::INFINITY;
            }
        };
        let score = if split {
            let alpha = match lk.tr_solve_lower_triangular(&fit.v) {
                Some(a) => a,
                None => return f64::INFINITY,
            };
            let mut scratch = vec![0.0; p];
            val_idx
                .iter()
                .map(|&n| {
                    let mut w = vec![0.0; p];
                    for r in 0..fit_idx.len() {
                        let kv = kernel(
                            theta,
                            &mean[n * l..(n + 1) * l],
                            &var[n * l..(n + 1) * l],
                            &fit_mean[r * l..(r + 1) * l],
                            &fit_var[r * l..(r + 1) * l],
                        );
                        for o in 0..p {
                            w[o] += kv * alpha[(r, o)];
                        }
                    }
                    lik(n, &w, &mut scratch)
                })
                .sum::<f64>()
        } else {
            fit.loss
        };
        if score.is_finite() && best.map_or(true, |b| score < b.1) {
            best = Some((theta, score));
            w_keep = &lk * &fit.v;
        }
        if score.is_finite() {
            score
        } else {
            f64::INFINITY
        }
    };
    if cfg.golden_iterations == 0 {
        eval(theta0.ln());
    } else {
        golden_section(
            &mut eval,
            theta0.ln() - THETA_SPAN_DOWN.ln(),
            theta0.ln() + THETA_SPAN_UP.ln(),
            cfg.golden_iterations,
        );
    }
    let theta = match best {
        Some((t, _)) => t,
        None => return Err(failure.unwrap_or_else(|| Error::NonFinite("GP MAP objective".into()))),
    };

    let k = kernel_matrix(theta, &mean, &var, input_dims);
    let (lk, jitter) = cholesky_with_jitter(&k)?;
    let mut lb = identity.clone();
    let mut fit = map_fit(&lk, &lb, DMatrix::zeros(m, p), &lik, &cfg.optimizer)?;
    let mut b = identity.clone();
    if p > 1 {
        // Output correlations of the latents, shrunk halfway to identity.
        let s = {
            let u = &fit.v * lb.transpose();
            u.tr_mul(&u)
        };
        let mut c = DMatrix::<f64>::identity(p, p);
        for i in 0..p {
            for j in 0..p {
                let d = (s[(i, i)] * s[(j, j)]).sqrt();
                if i != j && d > 1e-12 {
                    c[(i, j)] = s[(i, j)] / d;
                }
            }
        }
        b = (c + &identity) * 0.5;
        if let Some(ch) = b.clone().cholesky() {
            let w = &lk * &fit.v * lb.transpose();
            lb = ch.unpack();
            fit = map_fit(&lk, &lb, whiten(&lk, &lb, &w), &lik, &cfg.optimizer)?;
        } else {
            b = identity.clone();
        }
    }

    let w = &lk * (&fit.v * lb.transpose());
    let alpha = lk
        .tr_solve_lower_triangular(&(&fit.v * lb.transpose()))
        .ok_or_else(|| Error::NotPositiveDefinite("kernel factor".into()))?;
    let row_major = |a: &DMatrix<f64>| a.transpose().as_slice().to_vec();
    let model = GpScaleModel {
        input_dims,
        outputs: p,
        train_mean: mean,
        train_var: var,
        latents: row_major(&w),
        alpha: row_major(&alpha),
        theta,
        jitter,
        coregionalization: row_major(&b),
    };
    Ok(GpFitReport { model, trace: fit.trace })
}
