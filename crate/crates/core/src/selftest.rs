//! Quick oracle checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benes::{benes_exact_identity, relative_l2, GridSpec, RotatedBenes};
use crate::flow::{Flow, FlowConfig};
use crate::galerkin::{assemble, sample_pairs, GalerkinConfig};
use crate::integrator::{integrate, IntegratorConfig};
use crate::sde::{flow_density, Brownian};
use crate::source::SourceGaussian;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, bound: f64) -> Check {
    Check {
        name,
        passed: value < bound,
        detail: format!("{value:.3e} (bound {bound:.0e})"),
    }
}

fn bench_flow() -> Flow {
    Flow::new(FlowConfig {
        dim: 2,
        layers: 10,
        split: 1,
        beta: FlowConfig::DEFAULT_BETA,
        hidden: 4,
    })
    .expect("valid configuration")
}

fn random_theta(flow: &Flow, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..flow.param_count()).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn roundtrip() -> Check {
    let flow = bench_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let theta = random_theta(&flow, &mut rng, 0.5);
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let x = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let y = flow.forward(&theta, &x, &x0).map(|e| e.y);
        let back = y.and_then(|y| flow.inverse(&theta, &y, &x0));
        worst = match back {
            Ok(b) => worst.max((b[0] - x[0]).abs()).max((b[1] - x[1]).abs()),
            Err(_) => f64::INFINITY,
        };
    }
    check("flow inverse roundtrip", worst, 1e-9)
}

fn spatial_derivatives() -> Check {
    let flow = bench_flow();
    let model = RotatedBenes::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let theta = random_theta(&flow, &mut rng, 0.3);
        let x0 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let x = [x0[0] + rng.gen_range(-1.0..1.0), x0[1] + rng.gen_range(-1.0..1.0)];
        let tau = rng.gen_range(0.2..2.0);
        let p = |q: &[f64]| flow_density(&flow, &model, &theta, 0.0, tau, &x0, q).map(|d| d.value);
        let (Ok(de), Ok(a), Ok(b), Ok(c), Ok(d)) = (
            flow_density(&flow, &model, &theta, 0.0, tau, &x0, &x),
            p(&[x[0] + 1e-5, x[1]]),
            p(&[x[0] - 1e-5, x[1]]),
            p(&[x[0], x[1] + 1e-5]),
            p(&[x[0], x[1] - 1e-5]),
        ) else {
            return check("density gradient vs finite differences", f64::INFINITY, 1e-4);
        };
        let fd = [(a - b) / 2e-5, (c - d) / 2e-5];
        let err = (de.grad[0] - fd[0]).hypot(de.grad[1] - fd[1]) / fd[0].hypot(fd[1]).max(1e-12);
        worst = worst.max(err);
    }
    check("density gradient vs finite differences", worst, 1e-4)
}

fn heat_kernel() -> Check {
    let flow = bench_flow();
    let theta = flow.identity_init(0);
    let model = Brownian::new(2);
    let cfg = GalerkinConfig {
        n_samples: 200,
        ..GalerkinConfig::default()
    };
    let mut worst: f64 = 0.0;
    for (round, tau) in [0.01, 0.5, 2.0].into_iter().enumerate() {
        let sys = sample_pairs(&flow, &model, &theta, 0.0, tau, &cfg, round as u64)
            .and_then(|p| assemble(&flow, &model, &theta, 0.0, tau, &p));
        worst = match sys {
            Ok(s) => s.rhs.iter().fold(worst, |w, r| w.max(r.abs())),
            Err(_) => f64::INFINITY,
        };
    }
    check("heat kernel Galerkin right-hand side", worst, 1e-8)
}

fn benes_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let x = [x0[0] + rng.gen_range(-2.0..2.0), x0[1] + rng.gen_range(-2.0..2.0)];
        let tau = rng.gen_range(0.2..3.0);
        let rho = |y: [f64; 2], t: f64| benes_exact_identity(&y, t, &x0).unwrap_or(f64::NAN);
        let mut res = (rho(x, tau + h) - rho(x, tau - h)) / (2.0 * h);
        for i in 0..2 {
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            res += (p[i].tanh() * rho(p, tau) - m[i].tanh() * rho(m, tau)) / (2.0 * h);
            res -= 0.5 * (rho(p, tau) - 2.0 * rho(x, tau) + rho(m, tau)) / (h * h);
        }
        worst = worst.max(res.abs());
    }
    check("closed-form density solves Fokker-Planck", worst, 1e-4)
}

fn short_time() -> Check {
    let model = RotatedBenes::standard();
    let grid = GridSpec::error_default();
    let pts = grid.points();
    let mut errs = Vec::new();
    for tau in [0.2, 0.1, 0.05, 0.01] {
        let Ok(src) = SourceGaussian::new(&model, 0.0, tau, &[0.0, 0.0]) else {
            return check("source converges at short times", f64::INFINITY, 1.0);
        };
        let approx: Vec<f64> = pts.iter().map(|p| src.density(p)).collect();
        let exact: Vec<f64> = pts.iter().map(|p| model.exact(p, tau, &[0.0, 0.0]).unwrap_or(f64::NAN)).collect();
        errs.push(relative_l2(&grid, &approx, &exact));
    }
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    Check {
        name: "source converges at short times",
        passed: decreasing,
        detail: errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" > "),
    }
}

fn ode_order() -> Check {
    let mut pts = Vec::new();
    for k in 0..6 {
        let rtol = 1e-4 * 0.25f64.powi(k);
        let cfg = IntegratorConfig {
            t_start: 0.1,
            t_end: 2.1,
            rtol,
            atol: 1e-3 * rtol,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 0.5,
            stride: 1,
        };
        let mut decay = |th: &[f64], _: f64| th.iter().map(|v| -v).collect::<Vec<_>>();
        let Ok(tr) = integrate(&[1.0], &mut decay, &cfg, |_, _| {}) else {
            return check("integrator convergence order", 0.0, 1.0);
        };
        let err = (tr.last()[0] - (-2.0f64).exp()).abs();
        pts.push(((tr.accepted as f64).ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    Check {
        name: "integrator convergence order",
        passed: -slope >= 2.5,
        detail: format!("{:.2} (bound 2.5)", -slope),
    }
}

pub fn run_all() -> Vec<Check> {
    vec![roundtrip(), spatial_derivatives(), heat_kernel(), benes_oracle(), short_time(), ode_order()]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
