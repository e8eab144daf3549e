use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position/size, velocity and acceleration for each of `(cx, cy, w, h)`.
pub const STATE_DIM: usize = 12;
pub const OBS_DIM: usize = 4;

/// Gaussian belief over an arbitrary state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    /// `x ← F x`, `P ← F P Fᵀ + Q`.
    pub fn predict(&self, f: &DMatrix<f64>, q: &DMatrix<f64>) -> Self {
        let mut cov = f * &self.cov * f.transpose() + q;
        symmetrize(&mut cov);
        Self { mean: f * &self.mean, cov }
    }

    /// Innovation `z - H x` and its covariance `H P Hᵀ + R`.
    pub fn innovation(&self, z: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let y = z - h * &self.mean;
        let mut s = h * &self.cov * h.transpose() + r;
        symmetrize(&mut s);
        (y, s)
    }

    /// Squared Mahalanobis distance of `z` from the predicted observation.
    pub fn nis(&self, z: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
        let (y, s) = self.innovation(z, h, r);
        let chol = s.cholesky().ok_or_else(|| Error::NotPositiveDefinite(" (innovation covariance)".into()))?;
        Ok(y.dot(&chol.solve(&y)))
    }

    /// Measurement update with Joseph-form covariance.
    pub fn update(&self, z: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let (y, s) = self.innovation(z, h, r);
        let chol = s.cholesky().ok_or_else(|| Error::NotPositiveDefinite(" (innovation covariance)".into()))?;
        // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ.
        let pht = &self.cov * h.transpose();
        let k = chol.solve(&pht.transpose()).transpose();
        let mean = &self.mean + &k * y;
        let i_kh = DMatrix::identity(self.mean.len(), self.mean.len()) - &k * h;
        let mut cov = &i_kh * &self.cov * i_kh.transpose() + &k * r * k.transpose();
        symmetrize(&mut cov);
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Kalman update".into()));
        }
        Ok(Self { mean, cov })
    }
}

/// Constant-acceleration motion model per box coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanConfig {
    pub dt: f64,
    /// Process-noise intensity per coordinate `(cx, cy, w, h)`.
    pub q: [f64; 4],
    pub initial_velocity_var: f64,
    pub initial_acceleration_var: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { dt: 1.0, q: [0.015, 0.015, 1e-4, 1e-4], initial_velocity_var: 25.0, initial_acceleration_var: 1.0 }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if self.q.iter().any(|q| !(*q >= 0.0 && q.is_finite())) {
            return Err(Error::InvalidConfig("process-noise intensities must be nonnegative".into()));
        }
        if !(self.initial_velocity_var > 0.0 && self.initial_acceleration_var > 0.0) {
            return Err(Error::InvalidConfig("initial velocity/acceleration variances must be positive".into()));
        }
        Ok(())
    }

    /// Block `[[1, dt, dt²/2], [0, 1, dt], [0, 0, 1]]` per coordinate.
    pub fn transition(&self) -> DMatrix<f64> {
        let dt = self.dt;
        let mut f = DMatrix::identity(STATE_DIM, STATE_DIM);
        for k in 0..OBS_DIM {
            f[(k, 4 + k)] = dt;
            f[(k, 8 + k)] = 0.5 * dt * dt;
            f[(4 + k, 8 + k)] = dt;
        }
        f
    }

    pub fn observation(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(OBS_DIM, STATE_DIM);
        for k in 0..OBS_DIM {
            h[(k, k)] = 1.0;
        }
        h
    }

    /// Discrete white-noise model: `q · g gᵀ` with `g = (dt²/2, dt, 1)` per
    /// coordinate.
    pub fn process_noise(&self) -> DMatrix<f64> {
        let dt = self.dt;
        let g = [0.5 * dt * dt, dt, 1.0];
        let mut m = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for k in 0..OBS_DIM {
            let idx = [k, 4 + k, 8 + k];
            for a in 0..3 {
                for b in 0..3 {
                    m[(idx[a], idx[b])] = self.q[k] * g[a] * g[b];
                }
            }
        }
        m
    }

    /// State at rest at the observed box with observation covariance `r`.
    pub fn initial_state(&self, z: &[f64; 4], r: &DMatrix<f64>) -> GaussianState {
        let mut mean = DVector::zeros(STATE_DIM);
        mean.rows_mut(0, OBS_DIM).copy_from_slice(z);
        let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
        cov.view_mut((0, 0), (OBS_DIM, OBS_DIM)).copy_from(r);
        for k in 0..OBS_DIM {
            cov[(4 + k, 4 + k)] = self.initial_velocity_var;
            cov[(8 + k, 8 + k)] = self.initial_acceleration_var;
        }
        GaussianState { mean, cov }
    }
}
