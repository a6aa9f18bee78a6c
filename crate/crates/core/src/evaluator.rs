//! Online queries against a trained checkpoint.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::benes::{relative_l2, GridSpec};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::sde::SdeModel;
use crate::source::SourceGaussian;

/// A loaded checkpoint together with its flow and model.
#[derive(Debug)]
pub struct Surrogate {
    ck: Checkpoint,
    flow: Flow,
    model: Box<dyn SdeModel>,
}

impl Surrogate {
    pub fn new(ck: Checkpoint) -> Result<Self> {
        let flow = Flow::new(ck.config.flow)?;
        let model = ck.config.model.build();
        if model.dim() != flow.dim() {
            return Err(Error::ConfigMismatch(format!(
                "model `{}` has dimension {}, flow has {}",
                model.id(),
                model.dim(),
                flow.dim()
            )));
        }
        if ck.cols() != flow.param_count() {
            return Err(Error::ConfigMismatch(format!(
                "{} stored parameters for a flow with {}",
                ck.cols(),
                flow.param_count()
            )));
        }
        Ok(Self { ck, flow, model })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(Checkpoint::load(path)?)
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ck
    }

    pub fn flow(&self) -> &Flow {
        &self.flow
    }

    pub fn model(&self) -> &dyn SdeModel {
        self.model.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn start(&self) -> f64 {
        self.ck.config.start
    }

    /// Admissible query times `[s + eps, T]`.
    pub fn t_range(&self) -> (f64, f64) {
        let (lo, hi) = self.ck.tau_range();
        (self.start() + lo, self.start() + hi)
    }

    /// Parameters at absolute time `t`.
    pub fn theta_at(&self, t: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.t_range();
        if !(t >= lo && t <= hi) {
            return Err(Error::Range { value: t, lo, hi });
        }
        let (tlo, thi) = self.ck.tau_range();
        self.ck.theta_at((t - self.start()).clamp(tlo, thi))
    }

    fn source(&self, t: f64, x0: &[f64]) -> Result<SourceGaussian> {
        SourceGaussian::new(self.model(), self.start(), t - self.start(), x0)
    }

    fn value(&self, theta: &[f64], src: &SourceGaussian, x: &[f64]) -> Result<f64> {
        let e = self.flow.forward(theta, x, src.x0())?;
        Ok((src.log_density(&e.y) + e.log_det).exp())
    }

    pub fn density(&self, x: &[f64], t: f64, x0: &[f64]) -> Result<f64> {
        let theta = self.theta_at(t)?;
        self.value(&theta, &self.source(t, x0)?, x)
    }

    pub fn density_many(&self, xs: &[Vec<f64>], t: f64, x0: &[f64]) -> Result<Vec<f64>> {
        let theta = self.theta_at(t)?;
        let src = self.source(t, x0)?;
        xs.par_iter().map(|x| self.value(&theta, &src, x)).collect()
    }

    /// Closed-form reference density, when the model has one.
    pub fn exact(&self, x: &[f64], t: f64, x0: &[f64]) -> Result<f64> {
        self.model
            .exact_density(self.start(), t, x, x0)
            .ok_or_else(|| Error::Config(format!("model `{}` has no closed-form density", self.model.id())))
    }

    /// Draws from the learned density by pulling source samples back through the flow.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, x0: &[f64], n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let theta = self.theta_at(t)?;
        let src = self.source(t, x0)?;
        (0..n)
            .map(|_| {
                let z = src.sample(rng);
                self.flow.inverse(&theta, &z, x0)
            })
            .collect()
    }

    /// Monte Carlo average of the learned kernel over the given initial points.
    pub fn green_convolve(&self, xs: &[Vec<f64>], t: f64, initial: &[Vec<f64>]) -> Result<Vec<f64>> {
        let theta = self.theta_at(t)?;
        let sources = initial
            .iter()
            .map(|x0| self.source(t, x0))
            .collect::<Result<Vec<_>>>()?;
        let n = initial.len() as f64;
        xs.par_iter()
            .map(|x| {
                let mut acc = 0.0;
                for src in &sources {
                    acc += self.value(&theta, src, x)?;
                }
                Ok(acc / n)
            })
            .collect()
    }

    /// Same estimator with the closed-form kernel.
    pub fn exact_convolve(&self, xs: &[Vec<f64>], t: f64, initial: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = initial.len() as f64;
        xs.par_iter()
            .map(|x| {
                let mut acc = 0.0;
                for x0 in initial {
                    acc += self.exact(x, t, x0)?;
                }
                Ok(acc / n)
            })
            .collect()
    }

    /// Relative L2 distance to the closed-form density on a planar grid.
    pub fn relative_l2_error(&self, t: f64, x0: &[f64], grid: &GridSpec) -> Result<f64> {
        grid.validate()?;
        if self.dim() != 2 {
            return Err(Error::UnsupportedDimension(self.dim()));
        }
        let pts: Vec<Vec<f64>> = grid.points().iter().map(|p| p.to_vec()).collect();
        let approx = self.density_many(&pts, t, x0)?;
        let exact = pts.iter().map(|p| self.exact(p, t, x0)).collect::<Result<Vec<_>>>()?;
        Ok(relative_l2(grid, &approx, &exact))
    }
}
