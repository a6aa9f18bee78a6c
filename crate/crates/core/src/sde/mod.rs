//! Diffusion models `dX = b(t, X) dt + sqrt(Sigma(t, X)) dW` and the
//! Fokker-Planck operator applied to flow densities.

mod density;

pub use density::{
    adjoint_divergence_form, adjoint_expanded, adjoint_generator, flow_density, flow_density_with,
    DensityEval,
};

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::benes::RotatedBenes;
use crate::error::{Error, Result};
use crate::kv::KvDoc;

pub trait SdeModel: Debug + Send + Sync {
    /// Registry name, stored in checkpoints.
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64]) -> Vec<f64>;

    fn sqrt_diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64>;

    fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.sqrt_diffusion(t, x);
        &s * s.transpose()
    }

    /// Divergence of the drift; central differences unless overridden.
    fn drift_div(&self, t: f64, x: &[f64]) -> f64 {
        let h = 1e-6;
        let mut p = x.to_vec();
        let mut div = 0.0;
        for i in 0..x.len() {
            p[i] = x[i] + h;
            let fp = self.drift(t, &p)[i];
            p[i] = x[i] - h;
            let fm = self.drift(t, &p)[i];
            p[i] = x[i];
            div += (fp - fm) / (2.0 * h);
        }
        div
    }

    /// Whether `Sigma` is independent of `(t, x)`.
    fn constant_diffusion(&self) -> bool {
        false
    }

    /// Closed-form transition density, when one is known.
    fn exact_density(&self, _t0: f64, _t: f64, _x: &[f64], _x0: &[f64]) -> Option<f64> {
        None
    }
}

/// Standard Brownian motion: zero drift, identity diffusion.
#[derive(Debug, Clone)]
pub struct Brownian {
    dim: usize,
}

impl Brownian {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl SdeModel for Brownian {
    fn id(&self) -> &str {
        "brownian"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn sqrt_diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }

    fn drift_div(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }

    fn constant_diffusion(&self) -> bool {
        true
    }

    /// Heat kernel.
    fn exact_density(&self, t0: f64, t: f64, x: &[f64], x0: &[f64]) -> Option<f64> {
        let tau = t - t0;
        if tau <= 0.0 {
            return None;
        }
        let r2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        Some((-r2 / (2.0 * tau)).exp() / (2.0 * std::f64::consts::PI * tau).powf(self.dim as f64 / 2.0))
    }
}

/// Registry entry for the models selectable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    BenesRot { angle: f64 },
    Brownian { dim: usize },
}

impl ModelSpec {
    /// Reads `model.id` (default `benes_rot`) and its parameters.
    pub fn from_doc(doc: &KvDoc, dim: usize) -> Result<Self> {
        match doc.get_str("model.id").unwrap_or("benes_rot") {
            "brownian" => {
                if doc.contains("model.angle") {
                    return Err(Error::Config("model `brownian` takes no `model.angle`".into()));
                }
                Ok(ModelSpec::Brownian { dim })
            }
            "benes_rot" => {
                if dim != 2 {
                    return Err(Error::Config(format!(
                        "model `benes_rot` is two-dimensional, flow.dim = {dim}"
                    )));
                }
                let angle = doc.get_or("model.angle", std::f64::consts::FRAC_PI_3)?;
                if !angle.is_finite() {
                    return Err(Error::Config(format!("model.angle = {angle}")));
                }
                Ok(ModelSpec::BenesRot { angle })
            }
            other => Err(Error::Config(format!(
                "unknown model `{other}` (known: benes_rot, brownian)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::BenesRot { .. } => "benes_rot",
            ModelSpec::Brownian { .. } => "brownian",
        }
    }

    pub fn write(&self, doc: &mut KvDoc) {
        doc.set("model.id", self.id());
        if let ModelSpec::BenesRot { angle } = self {
            doc.set("model.angle", angle);
        }
    }

    pub fn build(&self) -> Box<dyn SdeModel> {
        match *self {
            ModelSpec::BenesRot { angle } => Box::new(RotatedBenes::new(angle)),
            ModelSpec::Brownian { dim } => Box::new(Brownian::new(dim)),
        }
    }
}

/// Euler-Maruyama path on `t_grid`; row `k` is the state at `t_grid[k]`.
pub fn em_path_sample<R: Rng + ?Sized>(
    model: &dyn SdeModel,
    x0: &[f64],
    t_grid: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("time grid must be strictly increasing".into()));
    }
    let d = model.dim();
    let mut path = Vec::with_capacity(t_grid.len());
    if t_grid.is_empty() {
        return Ok(path);
    }
    path.push(x0.to_vec());
    for w in t_grid.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let x = path.last().unwrap();
        let b = model.drift(t, x);
        let s = model.sqrt_diffusion(t, x);
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = s * g * dt.sqrt();
        let next = (0..d).map(|i| x[i] + b[i] * dt + noise[i]).collect();
        path.push(next);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::SourceGaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registry() {
        let doc = KvDoc::parse("model.id = brownian").unwrap();
        assert_eq!(ModelSpec::from_doc(&doc, 3).unwrap().build().id(), "brownian");
        let doc = KvDoc::parse("model.id = benes_rot\nmodel.angle = 0").unwrap();
        let spec = ModelSpec::from_doc(&doc, 2).unwrap();
        assert_eq!(spec.build().id(), "benes_rot");
        let mut out = KvDoc::new();
        spec.write(&mut out);
        assert_eq!(out, doc);
        assert_eq!(ModelSpec::from_doc(&KvDoc::new(), 2).unwrap(), ModelSpec::BenesRot { angle: std::f64::consts::FRAC_PI_3 });
        assert!(ModelSpec::from_doc(&doc, 3).is_err());
        assert!(ModelSpec::from_doc(&KvDoc::parse("model.id = ou").unwrap(), 2).is_err());
    }

    #[test]
    fn diffusion_is_square_of_its_root() {
        let m = RotatedBenes::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let s = m.sqrt_diffusion(0.0, &x);
            let diff = m.diffusion(0.0, &x) - &s * s.transpose();
            assert!(diff.amax() < 1e-12);
            assert!(m.diffusion(0.0, &x).cholesky().is_some());
        }
    }

    #[test]
    fn brownian_increments_have_variance_dt() {
        let m = Brownian::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dt = 0.05;
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let p = em_path_sample(&m, &[0.0, 0.0], &[0.0, dt], &mut rng).unwrap();
            for i in 0..2 {
                sum[i] += p[1][i];
                sq[i] += p[1][i] * p[1][i];
            }
        }
        let se = dt * (2.0 / n as f64).sqrt();
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!((var - dt).abs() < 4.0 * se, "{var}");
        }
    }

    #[test]
    fn one_step_matches_source_moments() {
        let m = RotatedBenes::standard();
        let x0 = [0.8, -0.3];
        let tau = 0.3;
        let src = SourceGaussian::new(&m, 0.0, tau, &x0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 50_000;
        let mut em = [0.0; 2];
        let mut sz = [0.0; 2];
        for _ in 0..n {
            let p = em_path_sample(&m, &x0, &[0.0, tau], &mut rng).unwrap();
            let z = src.sample(&mut rng);
            for i in 0..2 {
                em[i] += p[1][i] / n as f64;
                sz[i] += z[i] / n as f64;
            }
        }
        let se = (2.0 * tau / n as f64).sqrt();
        for i in 0..2 {
            assert!((em[i] - sz[i]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn paths_are_seeded_and_grids_validated() {
        let m = RotatedBenes::standard();
        let grid = [0.0, 0.1, 0.25, 0.3];
        let a = em_path_sample(&m, &[0.1, 0.2], &grid, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = em_path_sample(&m, &[0.1, 0.2], &grid, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(em_path_sample(&m, &[0.0, 0.0], &[0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn fallback_divergence_matches_analytic() {
        #[derive(Debug)]
        struct Fd(RotatedBenes);
        impl SdeModel for Fd {
            fn id(&self) -> &str {
                "fd"
            }
            fn dim(&self) -> usize {
                2
            }
            fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
                self.0.drift(t, x)
            }
            fn sqrt_diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
                self.0.sqrt_diffusion(t, x)
            }
        }
        let m = RotatedBenes::standard();
        let fd = Fd(m.clone());
        for x in [[0.3, -0.7], [1.5, 2.0], [-2.2, 0.1]] {
            assert!((fd.drift_div(0.0, &x) - m.drift_div(0.0, &x)).abs() < 1e-8);
        }
    }
}
