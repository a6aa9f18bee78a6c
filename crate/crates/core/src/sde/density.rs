use nalgebra::DMatrix;

use super::SdeModel;
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::jet::{Jet, Scalar};
use crate::source::SourceGaussian;

/// Flow density `P(x | theta, tau, x0)` with its spatial gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
    /// Mapped point `n_theta(x | x0)`.
    pub y: Vec<f64>,
    pub log_det: f64,
}

pub fn flow_density(
    flow: &Flow,
    model: &dyn SdeModel,
    theta: &[f64],
    t0: f64,
    tau: f64,
    x0: &[f64],
    x: &[f64],
) -> Result<DensityEval> {
    let src = SourceGaussian::new(model, t0, tau, x0)?;
    flow_density_with(flow, &src, theta, x)
}

/// As [`flow_density`], reusing a prepared source.
pub fn flow_density_with(
    flow: &Flow,
    src: &SourceGaussian,
    theta: &[f64],
    x: &[f64],
) -> Result<DensityEval> {
    flow.check(theta, x, src.x0())?;
    Ok(match flow.dim() {
        2 => jet_density::<2>(flow, src, theta, x),
        3 => jet_density::<3>(flow, src, theta, x),
        4 => jet_density::<4>(flow, src, theta, x),
        5 => jet_density::<5>(flow, src, theta, x),
        6 => jet_density::<6>(flow, src, theta, x),
        d => return Err(Error::UnsupportedDimension(d)),
    })
}

fn jet_density<const N: usize>(
    flow: &Flow,
    src: &SourceGaussian,
    theta: &[f64],
    x: &[f64],
) -> DensityEval {
    let xs = Jet::<N>::variables(x);
    let (y, log_det) = flow.forward_generic(theta, &xs, src.x0());
    let p = (src.log_density_generic(&y) + log_det).exp();
    DensityEval {
        value: p.v,
        grad: p.g.to_vec(),
        hess: p.h.iter().map(|r| r.to_vec()).collect(),
        y: y.iter().map(|v| v.value()).collect(),
        log_det: log_det.v,
    }
}

/// `L*_t P` with the diffusion treated as constant:
/// `-(div b) P - b . grad P + 1/2 tr(Sigma hess P)`.
pub fn adjoint_expanded(model: &dyn SdeModel, t: f64, x: &[f64], de: &DensityEval) -> f64 {
    let b = model.drift(t, x);
    let sigma = model.diffusion(t, x);
    let d = x.len();
    let mut out = -model.drift_div(t, x) * de.value;
    for i in 0..d {
        out -= b[i] * de.grad[i];
        for j in 0..d {
            out += 0.5 * sigma[(i, j)] * de.hess[i][j];
        }
    }
    out
}

/// Full `div[-b P + 1/2 div(Sigma P)]` for state-dependent `Sigma`; derivatives
/// of `Sigma` are taken by central differences.
pub fn adjoint_divergence_form(model: &dyn SdeModel, t: f64, x: &[f64], de: &DensityEval) -> f64 {
    let d = x.len();
    let h = 1e-4;
    let sigma_at = |shift: &[(usize, f64)]| -> DMatrix<f64> {
        let mut p = x.to_vec();
        for &(i, s) in shift {
            p[i] += s;
        }
        model.diffusion(t, &p)
    };
    let sigma = model.diffusion(t, x);
    // d_i Sigma
    let first: Vec<DMatrix<f64>> = (0..d)
        .map(|i| (sigma_at(&[(i, h)]) - sigma_at(&[(i, -h)])) / (2.0 * h))
        .collect();
    let b = model.drift(t, x);
    let mut drift_part = -model.drift_div(t, x) * de.value;
    for i in 0..d {
        drift_part -= b[i] * de.grad[i];
    }
    let mut diff_part = 0.0;
    for i in 0..d {
        for j in 0..d {
            let second = if i == j {
                (sigma_at(&[(i, h)])[(i, i)] - 2.0 * sigma[(i, i)] + sigma_at(&[(i, -h)])[(i, i)])
                    / (h * h)
            } else {
                (sigma_at(&[(i, h), (j, h)])[(i, j)] - sigma_at(&[(i, h), (j, -h)])[(i, j)]
                    - sigma_at(&[(i, -h), (j, h)])[(i, j)]
                    + sigma_at(&[(i, -h), (j, -h)])[(i, j)])
                    / (4.0 * h * h)
            };
            diff_part += second * de.value
                + first[i][(i, j)] * de.grad[j]
                + first[j][(i, j)] * de.grad[i]
                + sigma[(i, j)] * de.hess[i][j];
        }
    }
    drift_part + 0.5 * diff_part
}

/// Adjoint generator of the diffusion applied to the flow density at `x`.
pub fn adjoint_generator(model: &dyn SdeModel, t: f64, x: &[f64], de: &DensityEval) -> f64 {
    if model.constant_diffusion() {
        adjoint_expanded(model, t, x, de)
    } else {
        adjoint_divergence_form(model, t, x, de)
    }
}
