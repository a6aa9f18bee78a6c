//! Rotated two-dimensional Beneš benchmark: model, closed-form transition
//! density, grid metrics and the Gaussian-mixture initial law.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::sde::SdeModel;

/// `dX = R tanh(R^T X) dt + R dW` for a rotation `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedBenes {
    rot: Matrix2<f64>,
}

impl RotatedBenes {
    pub fn new(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rot: Matrix2::new(c, -s, s, c),
        }
    }

    /// Rotation by `pi/3`, the benchmark configuration.
    pub fn standard() -> Self {
        Self::new(PI / 3.0)
    }

    pub fn identity() -> Self {
        Self::new(0.0)
    }

    /// Accepts any proper rotation, row-major.
    pub fn from_matrix(m: [[f64; 2]; 2]) -> Result<Self> {
        let rot = Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
        let orth = (rot.transpose() * rot - Matrix2::identity()).amax();
        if !(orth <= 1e-14) || (rot.determinant() - 1.0).abs() > 1e-14 {
            return Err(Error::Domain(format!("{m:?} is not a rotation")));
        }
        Ok(Self { rot })
    }

    pub fn rotation(&self) -> [[f64; 2]; 2] {
        [
            [self.rot[(0, 0)], self.rot[(0, 1)]],
            [self.rot[(1, 0)], self.rot[(1, 1)]],
        ]
    }

    fn rotate_back(&self, x: &[f64]) -> Vector2<f64> {
        self.rot.transpose() * Vector2::new(x[0], x[1])
    }

    pub fn exact(&self, x: &[f64], tau: f64, x0: &[f64]) -> Result<f64> {
        let y = self.rotate_back(x);
        let y0 = self.rotate_back(x0);
        benes_exact_identity(&[y[0], y[1]], tau, &[y0[0], y0[1]])
    }
}

impl SdeModel for RotatedBenes {
    fn id(&self) -> &str {
        "benes_rot"
    }

    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        let u = self.rotate_back(x).map(f64::tanh);
        let b = self.rot * u;
        vec![b[0], b[1]]
    }

    fn sqrt_diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_iterator(2, 2, self.rot.iter().copied())
    }

    fn drift_div(&self, _t: f64, x: &[f64]) -> f64 {
        self.rotate_back(x)
            .iter()
            .map(|u| 1.0 / u.cosh().powi(2))
            .sum()
    }

    fn constant_diffusion(&self) -> bool {
        true
    }

    fn exact_density(&self, t0: f64, t: f64, x: &[f64], x0: &[f64]) -> Option<f64> {
        self.exact(x, t - t0, x0).ok()
    }
}

/// `ln cosh x` without overflow.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Closed-form density of the unrotated model.
pub fn benes_exact_identity(x: &[f64], tau: f64, x0: &[f64]) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::DegenerateTime(tau));
    }
    let r2 = (x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2);
    let log = -tau - (2.0 * PI * tau).ln() + ln_cosh(x[0]) + ln_cosh(x[1])
        - ln_cosh(x0[0])
        - ln_cosh(x0[1])
        - r2 / (2.0 * tau);
    Ok(log.exp())
}

pub fn benes_exact_rotated(x: &[f64], tau: f64, x0: &[f64], rot: &RotatedBenes) -> Result<f64> {
    rot.exact(x, tau, x0)
}

/// Tensor-product grid over a box, `n` nodes per axis (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub n: [usize; 2],
}

impl GridSpec {
    pub fn square(half_width: f64, n: usize) -> Self {
        Self {
            lo: [-half_width; 2],
            hi: [half_width; 2],
            n: [n; 2],
        }
    }

    /// Default metric grid: `[-10, 10]^2`, 201 nodes per axis.
    pub fn error_default() -> Self {
        Self::square(10.0, 201)
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..2 {
            if self.n[k] < 2 || !(self.hi[k] > self.lo[k]) || !self.lo[k].is_finite() || !self.hi[k].is_finite() {
                return Err(Error::Config(format!("bad grid {self:?}")));
            }
        }
        Ok(())
    }

    pub fn axis(&self, k: usize) -> Vec<f64> {
        let step = (self.hi[k] - self.lo[k]) / (self.n[k] - 1) as f64;
        (0..self.n[k]).map(|i| self.lo[k] + step * i as f64).collect()
    }

    /// Nodes in row-major order (second coordinate fastest).
    pub fn points(&self) -> Vec<[f64; 2]> {
        let a = self.axis(0);
        let b = self.axis(1);
        a.iter().flat_map(|&u| b.iter().map(move |&v| [u, v])).collect()
    }

    /// Trapezoid weights matching [`GridSpec::points`].
    pub fn weights(&self) -> Vec<f64> {
        let w1 = |k: usize| {
            let step = (self.hi[k] - self.lo[k]) / (self.n[k] - 1) as f64;
            (0..self.n[k])
                .map(|i| if i == 0 || i == self.n[k] - 1 { 0.5 * step } else { step })
                .collect::<Vec<_>>()
        };
        let (a, b) = (w1(0), w1(1));
        a.iter().flat_map(|&u| b.iter().map(move |&v| u * v)).collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights().iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// `||f - g|| / ||g||` in discrete L2 with trapezoid weights.
pub fn relative_l2(grid: &GridSpec, approx: &[f64], reference: &[f64]) -> f64 {
    let w = grid.weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for ((wi, a), r) in w.iter().zip(approx).zip(reference) {
        num += wi * (a - r) * (a - r);
        den += wi * r * r;
    }
    (num / den).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Row-major covariance.
    pub cov: [[f64; 2]; 2],
}

/// Gaussian mixture initial law on the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureInit {
    components: Vec<MixtureComponent>,
    chol: Vec<Matrix2<f64>>,
}

impl MixtureInit {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture has no components".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights must be positive and sum to 1, got {total}")));
        }
        let mut chol = Vec::with_capacity(components.len());
        for c in &components {
            let m = Matrix2::new(c.cov[0][0], c.cov[0][1], c.cov[1][0], c.cov[1][1]);
            if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-14 * m.amax() {
                return Err(Error::Config(format!("covariance {:?} is not symmetric", c.cov)));
            }
            let l = m
                .cholesky()
                .ok_or_else(|| Error::Config(format!("covariance {:?} is not positive definite", c.cov)))?
                .l();
            chol.push(l);
        }
        Ok(Self { components, chol })
    }

    /// `1/4 N([1, 1], 0.1^2 I) + 3/4 N([-0.75, -0.75], 0.5^2 I)`.
    pub fn standard() -> Self {
        Self::new(vec![
            MixtureComponent {
                weight: 0.25,
                mean: [1.0, 1.0],
                cov: [[0.01, 0.0], [0.0, 0.01]],
            },
            MixtureComponent {
                weight: 0.75,
                mean: [-0.75, -0.75],
                cov: [[0.25, 0.0], [0.0, 0.25]],
            },
        ])
        .expect("built-in mixture is valid")
    }

    /// Reads `mixture.<k>.weight`, `mixture.<k>.mean` (2 values) and
    /// `mixture.<k>.cov` (4 values, row-major) for `k = 0, 1, ...`.
    pub fn from_doc(doc: &KvDoc) -> Result<Self> {
        let mut components = Vec::new();
        for k in 0.. {
            let prefix = format!("mixture.{k}.");
            if !doc.keys().any(|key| key.starts_with(&prefix)) {
                break;
            }
            let weight: f64 = doc.require(&format!("{prefix}weight"))?;
            let mean = fixed_list::<2>(doc, &format!("{prefix}mean"))?;
            let cov = fixed_list::<4>(doc, &format!("{prefix}cov"))?;
            components.push(MixtureComponent {
                weight,
                mean,
                cov: [[cov[0], cov[1]], [cov[2], cov[3]]],
            });
        }
        let n = components.len();
        for key in doc.keys() {
            let ok = key
                .strip_prefix("mixture.")
                .and_then(|rest| rest.split_once('.'))
                .is_some_and(|(idx, field)| {
                    idx.parse::<usize>().is_ok_and(|i| i < n) && matches!(field, "weight" | "mean" | "cov")
                });
            if !ok {
                return Err(Error::Config(format!("unknown mixture key `{key}`")));
            }
        }
        Self::new(components)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(&self.chol)
            .map(|(c, l)| {
                let w = Vector2::new(x[0] - c.mean[0], x[1] - c.mean[1]);
                let v = l.solve_lower_triangular(&w).expect("factor is nonsingular");
                c.weight * (-0.5 * v.norm_squared()).exp() / (2.0 * PI * l[(0, 0)] * l[(1, 1)])
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                idx = i;
                break;
            }
        }
        let c = &self.components[idx];
        let g = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let v = self.chol[idx] * g;
        [c.mean[0] + v[0], c.mean[1] + v[1]]
    }
}

fn fixed_list<const N: usize>(doc: &KvDoc, key: &str) -> Result<[f64; N]> {
    let v = doc
        .get_list(key)?
        .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Config(format!("`{key}` needs {N} values, got {}", v.len())))
}

/// Monte Carlo Green's-function convolution: for each point, the average of
/// `kernel(x, x0_j)` over the given initial samples.
pub fn convolve_with<K>(points: &[[f64; 2]], initial: &[[f64; 2]], kernel: K) -> Result<Vec<f64>>
where
    K: Fn(&[f64], &[f64]) -> Result<f64>,
{
    let n = initial.len() as f64;
    points
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            for x0 in initial {
                acc += kernel(x, x0)?;
            }
            Ok(acc / n)
        })
        .collect()
}
