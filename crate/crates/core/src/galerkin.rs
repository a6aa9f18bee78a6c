//! Monte Carlo Galerkin projection of the Fokker-Planck equation onto the
//! tangent space of the flow parametrization.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::integrator::VelocityField;
use crate::sde::{adjoint_generator, flow_density_with, SdeModel};
use crate::source::SourceGaussian;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `lambda = factor * ||J||_F^2 / M`.
    Auto { factor: f64 },
    Fixed(f64),
}

impl Ridge {
    pub const DEFAULT_FACTOR: f64 = 1e-6;

    pub fn lambda(&self, sys: &GalerkinSystem) -> f64 {
        match *self {
            Ridge::Fixed(v) => v,
            Ridge::Auto { factor } => {
                if sys.cols == 0 {
                    0.0
                } else {
                    factor * sys.jac.iter().map(|v| v * v).sum::<f64>() / sys.cols as f64
                }
            }
        }
    }
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Auto {
            factor: Self::DEFAULT_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinConfig {
    pub n_samples: usize,
    /// Standard deviation of the Gaussian the initial points are drawn from.
    pub mu_std: f64,
    pub ridge: Ridge,
    pub seed: u64,
}

impl Default for GalerkinConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            mu_std: 0.75,
            ridge: Ridge::default(),
            seed: 0,
        }
    }
}

impl GalerkinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_std > 0.0) || !self.mu_std.is_finite() {
            return Err(Error::Config(format!("galerkin.mu_std must be positive, got {}", self.mu_std)));
        }
        let bad = match self.ridge {
            Ridge::Fixed(v) => !(v >= 0.0) || !v.is_finite(),
            Ridge::Auto { factor } => !(factor >= 0.0) || !factor.is_finite(),
        };
        if bad {
            return Err(Error::Config(format!("invalid ridge {:?}", self.ridge)));
        }
        Ok(())
    }
}

/// Independent generator for sample `index` of evaluation round `round`.
pub fn sample_rng(seed: u64, round: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 finalizer decorrelates neighbouring rounds
    let mut z = seed ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub x: Vec<f64>,
    pub x0: Vec<f64>,
}

/// Draws `x0 ~ N(0, mu_std^2 I)` and `x ~ P(. | theta, tau, x0)`, one `x` per `x0`.
pub fn sample_pairs(
    flow: &Flow,
    model: &dyn SdeModel,
    theta: &[f64],
    t0: f64,
    tau: f64,
    cfg: &GalerkinConfig,
    round: u64,
) -> Result<Vec<SamplePair>> {
    if !(tau > 0.0) {
        return Err(Error::DegenerateTime(tau));
    }
    let d = flow.dim();
    (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, round, i as u64);
            let x0: Vec<f64> = (0..d)
                .map(|_| cfg.mu_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let src = SourceGaussian::new(model, t0, tau, &x0)?;
            let z = src.sample(&mut rng);
            let x = flow.inverse(theta, &z, &x0)?;
            Ok(SamplePair { x, x0 })
        })
        .collect()
}

/// Row-major `rows x cols` Jacobian with its right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinSystem {
    pub rows: usize,
    pub cols: usize,
    pub jac: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl GalerkinSystem {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.jac[i * self.cols..(i + 1) * self.cols]
    }

    pub fn apply(&self, eta: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(eta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Mean squared residual `(1/N) ||J eta - f||^2`.
    pub fn residual_norm(&self, eta: &[f64]) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        let r = self.apply(eta);
        r.iter().zip(&self.rhs).map(|(a, f)| (a - f) * (a - f)).sum::<f64>() / self.rows as f64
    }
}

/// One row of the system: `dP/dtheta` and the Fokker-Planck defect of the source term.
fn assemble_row(
    flow: &Flow,
    model: &dyn SdeModel,
    theta: &[f64],
    t0: f64,
    tau: f64,
    pair: &SamplePair,
) -> Result<(Vec<f64>, f64)> {
    let src = SourceGaussian::new(model, t0, tau, &pair.x0)?;
    let de = flow_density_with(flow, &src, theta, &pair.x)?;
    let lp = adjoint_generator(model, t0 + tau, &pair.x, &de);
    let rhs = lp - de.log_det.exp() * src.dtau_density(&de.y);
    let seed_y = src.grad_log_density(&de.y);
    let (_, g) = flow.vjp(theta, &pair.x, &pair.x0, &seed_y, 1.0)?;
    let row: Vec<f64> = g.into_iter().map(|v| v * de.value).collect();
    Ok((row, rhs))
}

pub fn assemble(
    flow: &Flow,
    model: &dyn SdeModel,
    theta: &[f64],
    t0: f64,
    tau: f64,
    pairs: &[SamplePair],
) -> Result<GalerkinSystem> {
    if !(tau > 0.0) {
        return Err(Error::DegenerateTime(tau));
    }
    let cols = flow.param_count();
    let rows: Vec<(Vec<f64>, f64)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (row, rhs) = assemble_row(flow, model, theta, t0, tau, p).map_err(|e| Error::Assembly {
                index: i,
                reason: e.to_string(),
            })?;
            if !rhs.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Assembly {
                    index: i,
                    reason: format!("non-finite entry at x = {:?}, x0 = {:?}", p.x, p.x0),
                });
            }
            Ok((row, rhs))
        })
        .collect::<Result<_>>()?;
    let mut jac = Vec::with_capacity(rows.len() * cols);
    let mut rhs = Vec::with_capacity(rows.len());
    for (r, f) in rows {
        jac.extend_from_slice(&r);
        rhs.push(f);
    }
    Ok(GalerkinSystem {
        rows: rhs.len(),
        cols,
        jac,
        rhs,
    })
}

/// Minimizer of `||J eta - f||^2 + lambda ||eta||^2`.
///
/// `lambda > 0` uses a Householder QR of the stacked matrix `[J; sqrt(lambda) I]`;
/// `lambda = 0` uses a thin SVD and returns the minimum-norm solution.
pub fn solve_theta_dot(sys: &GalerkinSystem, lambda: f64) -> Vec<f64> {
    let (n, m) = (sys.rows, sys.cols);
    if n == 0 || m == 0 {
        return vec![0.0; m];
    }
    if lambda > 0.0 {
        let s = lambda.sqrt();
        let a = Mat::from_fn(n + m, m, |i, j| {
            if i < n {
                sys.jac[i * m + j]
            } else if i - n == j {
                s
            } else {
                0.0
            }
        });
        let b = Mat::from_fn(n + m, 1, |i, _| if i < n { sys.rhs[i] } else { 0.0 });
        let x = a.qr().solve_lstsq(&b);
        return (0..m).map(|j| x[(j, 0)]).collect();
    }
    let a = Mat::from_fn(n, m, |i, j| sys.jac[i * m + j]);
    let Ok(svd) = a.thin_svd() else {
        return vec![0.0; m];
    };
    let (u, sv, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = sv.nrows();
    let smax = if k > 0 { sv[0] } else { 0.0 };
    let cutoff = smax * f64::EPSILON * n.max(m) as f64;
    let mut eta = vec![0.0; m];
    for c in 0..k {
        if !(sv[c] > cutoff) {
            break;
        }
        let coef: f64 = (0..n).map(|i| u[(i, c)] * sys.rhs[i]).sum::<f64>() / sv[c];
        for (j, e) in eta.iter_mut().enumerate() {
            *e += coef * v[(j, c)];
        }
    }
    eta
}

/// Assembles at fresh samples and evaluates the mean squared residual of `eta`.
#[allow(clippy::too_many_arguments)]
pub fn residual_norm(
    flow: &Flow,
    model: &dyn SdeModel,
    theta: &[f64],
    eta: &[f64],
    t0: f64,
    tau: f64,
    pairs: &[SamplePair],
) -> Result<f64> {
    Ok(assemble(flow, model, theta, t0, tau, pairs)?.residual_norm(eta))
}

/// Diagnostics of the most recent velocity evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageStats {
    pub residual: f64,
    pub lambda: f64,
    pub eta_norm: f64,
}

/// The sampled Galerkin velocity `theta -> eta(theta, tau)`.
///
/// All stages of one integrator step draw from the same random round, so the
/// embedded error estimate compares evaluations under common random numbers.
pub struct GalerkinField<'a> {
    pub flow: &'a Flow,
    pub model: &'a dyn SdeModel,
    pub cfg: GalerkinConfig,
    /// Start time `s` of the transition.
    pub t0: f64,
    pub last: StageStats,
}

impl<'a> GalerkinField<'a> {
    pub fn new(flow: &'a Flow, model: &'a dyn SdeModel, cfg: GalerkinConfig, t0: f64) -> Self {
        Self {
            flow,
            model,
            cfg,
            t0,
            last: StageStats::default(),
        }
    }
}

impl VelocityField for GalerkinField<'_> {
    fn velocity(&mut self, theta: &[f64], tau: f64, step: u64) -> Result<Vec<f64>> {
        let pairs = sample_pairs(self.flow, self.model, theta, self.t0, tau, &self.cfg, step)?;
        let sys = assemble(self.flow, self.model, theta, self.t0, tau, &pairs)?;
        let lambda = self.cfg.ridge.lambda(&sys);
        let eta = solve_theta_dot(&sys, lambda);
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                tau,
                reason: "least-squares solve produced non-finite velocity".into(),
            });
        }
        self.last = StageStats {
            residual: sys.residual_norm(&eta),
            lambda,
            eta_norm: eta.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        Ok(eta)
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn diagnostics(&self) -> Option<(f64, f64)> {
        Some((self.last.residual, self.last.eta_norm))
    }
}
