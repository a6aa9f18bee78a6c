//! Adaptive Bogacki-Shampine 3(2) integration of the parameter dynamics.

use crate::error::{Error, Result};

/// Right-hand side `theta' = eta(theta, tau)`.
pub trait VelocityField {
    /// `step` is the number of steps accepted so far; stochastic fields use it
    /// to pick their random round so that every stage of a step, and every
    /// retry of a rejected step, sees the same draws.
    fn velocity(&mut self, theta: &[f64], tau: f64, step: u64) -> Result<Vec<f64>>;

    /// Deterministic fields may reuse the last stage of an accepted step as
    /// the first stage of the next one.
    fn deterministic(&self) -> bool {
        true
    }

    /// `(residual, |eta|)` of the latest evaluation, if the field tracks them.
    fn diagnostics(&self) -> Option<(f64, f64)> {
        None
    }
}

impl<F> VelocityField for F
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    fn velocity(&mut self, theta: &[f64], tau: f64, _step: u64) -> Result<Vec<f64>> {
        Ok(self(theta, tau))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Record every `stride`-th accepted step (first and last always kept).
    pub stride: usize,
}

impl IntegratorConfig {
    /// Defaults for integrating over `[0, span]` in elapsed time.
    pub fn for_span(span: f64) -> Self {
        Self {
            t_start: 1e-3 * span,
            t_end: span,
            rtol: 1e-3,
            atol: 1e-6,
            h_init: 1e-3 * span,
            h_min: 1e-10,
            h_max: 0.05,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.t_start > 0.0) || !(self.t_end > self.t_start) || !self.t_end.is_finite() {
            return fail(format!(
                "need 0 < t_start < t_end, got {} and {}",
                self.t_start, self.t_end
            ));
        }
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return fail(format!("tolerances must be positive, got rtol {} atol {}", self.rtol, self.atol));
        }
        if !(self.h_min > 0.0) || !(self.h_min <= self.h_init) || !(self.h_init <= self.h_max) {
            return fail(format!(
                "need 0 < h_min <= h_init <= h_max, got {} {} {}",
                self.h_min, self.h_init, self.h_max
            ));
        }
        if self.stride == 0 {
            return fail("integrator.stride must be at least 1".into());
        }
        Ok(())
    }
}

/// One accepted step, as reported to observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Elapsed time at the end of the step.
    pub tau: f64,
    pub h: f64,
    pub error_norm: f64,
    /// Least-squares residual and velocity norm at the start of the step.
    pub residual: Option<f64>,
    pub eta_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    pub accepted: u64,
    pub rejected: u64,
    pub evaluations: u64,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.thetas.last().expect("trajectory is never empty")
    }
}

const C2: f64 = 0.5;
const C3: f64 = 0.75;
const B1: f64 = 2.0 / 9.0;
const B2: f64 = 1.0 / 3.0;
const B3: f64 = 4.0 / 9.0;
// difference between the third- and second-order weights
const E1: f64 = -5.0 / 72.0;
const E2: f64 = 1.0 / 12.0;
const E3: f64 = 1.0 / 9.0;
const E4: f64 = -1.0 / 8.0;

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += h * c * v;
        }
    }
    out
}

pub fn integrate(
    theta0: &[f64],
    field: &mut dyn VelocityField,
    cfg: &IntegratorConfig,
    mut observer: impl FnMut(&StepRecord, &[f64]),
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut traj = Trajectory {
        times: vec![cfg.t_start],
        thetas: vec![theta0.to_vec()],
        accepted: 0,
        rejected: 0,
        evaluations: 0,
    };
    let mut theta = theta0.to_vec();
    let mut tau = cfg.t_start;
    let mut h = cfg.h_init;
    let mut fsal: Option<Vec<f64>> = None;
    let eval = |f: &mut dyn VelocityField, th: &[f64], t: f64, step: u64, n: &mut u64| {
        *n += 1;
        let k = f.velocity(th, t, step)?;
        if k.len() != th.len() || k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                tau: t,
                reason: "velocity is non-finite or has the wrong length".into(),
            });
        }
        Ok(k)
    };
    while tau < cfg.t_end {
        let remaining = cfg.t_end - tau;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        let step = traj.accepted;
        let k1 = match fsal.take() {
            Some(k) => k,
            None => eval(field, &theta, tau, step, &mut traj.evaluations)?,
        };
        let diag = field.diagnostics();
        let k2 = eval(field, &axpy(&theta, h, &[(C2, &k1)]), tau + C2 * h, step, &mut traj.evaluations)?;
        let k3 = eval(field, &axpy(&theta, h, &[(C3, &k2)]), tau + C3 * h, step, &mut traj.evaluations)?;
        let next = axpy(&theta, h, &[(B1, &k1), (B2, &k2), (B3, &k3)]);
        let t_next = if last { cfg.t_end } else { tau + h };
        let k4 = eval(field, &next, t_next, step, &mut traj.evaluations)?;
        let mut acc = 0.0;
        for i in 0..theta.len() {
            let e = h * (E1 * k1[i] + E2 * k2[i] + E3 * k3[i] + E4 * k4[i]);
            let sc = cfg.atol + cfg.rtol * theta[i].abs().max(next[i].abs());
            acc += (e / sc) * (e / sc);
        }
        let err = if theta.is_empty() { 0.0 } else { (acc / theta.len() as f64).sqrt() };
        if !err.is_finite() {
            return Err(Error::Integration {
                tau,
                reason: "error estimate is not finite".into(),
            });
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            theta = next;
            tau = t_next;
            traj.accepted += 1;
            let rec = StepRecord {
                step: traj.accepted,
                tau,
                h,
                error_norm: err,
                residual: diag.map(|d| d.0),
                eta_norm: diag.map(|d| d.1),
            };
            observer(&rec, &theta);
            if traj.accepted.is_multiple_of(cfg.stride as u64) || tau >= cfg.t_end {
                traj.times.push(tau);
                traj.thetas.push(theta.clone());
            }
            if field.deterministic() {
                fsal = Some(k4);
            }
            h = (h * factor).min(cfg.h_max);
        } else {
            traj.rejected += 1;
            h *= factor.min(1.0);
            if h < cfg.h_min {
                return Err(Error::StepUnderflow {
                    tau,
                    step: h,
                    error_norm: err,
                });
            }
        }
    }
    Ok(traj)
}
