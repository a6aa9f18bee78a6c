//! Gaussian source law of one Euler-Maruyama step.
//!
//! For elapsed time `tau = t - s` the source is
//! `N(x0 + b(s, x0) tau, Sigma(s, x0) tau)`. It concentrates at `x0` as
//! `tau -> 0`, which is how the Dirac initial datum is imposed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::jet::Scalar;
use crate::sde::SdeModel;

#[derive(Debug, Clone)]
pub struct SourceGaussian {
    x0: Vec<f64>,
    tau: f64,
    drift0: Vec<f64>,
    /// Lower Cholesky factor of `Sigma(s, x0)`.
    chol0: DMatrix<f64>,
    mean: Vec<f64>,
    log_norm: f64,
}

impl SourceGaussian {
    pub fn new(model: &dyn SdeModel, t0: f64, tau: f64, x0: &[f64]) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::DegenerateTime(tau));
        }
        let d = model.dim();
        if x0.len() != d {
            return Err(Error::Config(format!(
                "initial point has dimension {}, model has {d}",
                x0.len()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("x0 = {x0:?}")));
        }
        let drift0 = model.drift(t0, x0);
        let sigma0 = model.diffusion(t0, x0);
        let chol0 = sigma0
            .cholesky()
            .ok_or_else(|| Error::Domain(format!("diffusion at x0 = {x0:?} is not positive definite")))?
            .l();
        let mean = x0.iter().zip(&drift0).map(|(a, b)| a + b * tau).collect();
        let log_diag: f64 = chol0.diagonal().iter().map(|v| v.ln()).sum();
        let log_norm =
            -0.5 * d as f64 * (2.0 * std::f64::consts::PI * tau).ln() - log_diag;
        Ok(Self {
            x0: x0.to_vec(),
            tau,
            drift0,
            chol0,
            mean,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.chol0 * self.chol0.transpose() * self.tau
    }

    /// `L0^{-1} w` by forward substitution.
    fn solve_lower(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut v = vec![0.0; d];
        for i in 0..d {
            let mut acc = w[i];
            for j in 0..i {
                acc -= self.chol0[(i, j)] * v[j];
            }
            v[i] = acc / self.chol0[(i, i)];
        }
        v
    }

    /// Standardized coordinates `(tau Sigma0)^{-1/2} (z - mean)`.
    fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let s = 1.0 / self.tau.sqrt();
        self.solve_lower(&w).into_iter().map(|v| v * s).collect()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let v = self.whiten(z);
        self.log_norm - 0.5 * v.iter().map(|a| a * a).sum::<f64>()
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        self.log_density(z).exp()
    }

    pub fn log_density_generic<S: Scalar>(&self, y: &[S]) -> S {
        let d = self.dim();
        let s = 1.0 / self.tau.sqrt();
        let mut v: Vec<S> = Vec::with_capacity(d);
        let mut q = S::constant(0.0);
        for i in 0..d {
            let mut acc = y[i] + (-self.mean[i]);
            for (j, vj) in v.iter().enumerate() {
                acc = acc - *vj * self.chol0[(i, j)];
            }
            let vi = acc * (1.0 / self.chol0[(i, i)]);
            q = q + vi * vi;
            v.push(vi);
        }
        q * (-0.5 * s * s) + self.log_norm
    }

    /// `grad_z log p(z) = -(tau Sigma0)^{-1} (z - mean)`.
    pub fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let v = self.whiten(z);
        // back substitution with L0^T
        let mut u = vec![0.0; d];
        for i in (0..d).rev() {
            let mut acc = v[i];
            for j in i + 1..d {
                acc -= self.chol0[(j, i)] * u[j];
            }
            u[i] = acc / self.chol0[(i, i)];
        }
        let s = 1.0 / self.tau.sqrt();
        u.into_iter().map(|a| -a * s).collect()
    }

    /// Partial derivative of `log p(z | tau)` with respect to `tau` at fixed `z`.
    pub fn dtau_log_density(&self, z: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let w: Vec<f64> = z.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        let a = self.solve_lower(&w);
        let b = self.solve_lower(&self.drift0);
        let aa: f64 = a.iter().map(|v| v * v).sum();
        let bb: f64 = b.iter().map(|v| v * v).sum();
        let dq = -aa / (self.tau * self.tau) + bb;
        -0.5 * d / self.tau - 0.5 * dq
    }

    pub fn dtau_density(&self, z: &[f64]) -> f64 {
        self.density(z) * self.dtau_log_density(z)
    }

    /// Maps standard normal coordinates to a source sample.
    pub fn transform(&self, g: &[f64]) -> Vec<f64> {
        let s = self.tau.sqrt();
        let lg = &self.chol0 * DVector::from_column_slice(g);
        self.mean.iter().zip(lg.iter()).map(|(m, v)| m + s * v).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let g: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform(&g)
    }
}

pub fn source_density(model: &dyn SdeModel, t0: f64, tau: f64, x0: &[f64], z: &[f64]) -> Result<f64> {
    Ok(SourceGaussian::new(model, t0, tau, x0)?.density(z))
}

pub fn source_dt(model: &dyn SdeModel, t0: f64, tau: f64, x0: &[f64], z: &[f64]) -> Result<f64> {
    Ok(SourceGaussian::new(model, t0, tau, x0)?.dtau_density(z))
}

pub fn source_sample<R: Rng + ?Sized>(
    model: &dyn SdeModel,
    t0: f64,
    tau: f64,
    x0: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(SourceGaussian::new(model, t0, tau, x0)?.sample(rng))
}
