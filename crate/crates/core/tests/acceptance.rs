//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its criterion
//! before asserting. Lines go straight to the process stdout, so they show up
//! without `--nocapture`.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use galerkin_flow::benes::{benes_exact_identity, relative_l2, GridSpec, MixtureInit, RotatedBenes};
use galerkin_flow::checkpoint::Checkpoint;
use galerkin_flow::config::RunConfig;
use galerkin_flow::evaluator::Surrogate;
use galerkin_flow::flow::{Flow, FlowConfig};
use galerkin_flow::galerkin::{assemble, sample_pairs, GalerkinConfig, SamplePair};
use galerkin_flow::integrator::{integrate, IntegratorConfig};
use galerkin_flow::sde::{flow_density, Brownian};
use galerkin_flow::source::SourceGaussian;
use galerkin_flow::train::train;

fn report(id: &str, name: &str, passed: bool, detail: String) {
    let line = format!("criterion {id} [{}] {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn bench_flow() -> Flow {
    Flow::new(FlowConfig {
        dim: 2,
        layers: 10,
        split: 1,
        beta: FlowConfig::DEFAULT_BETA,
        hidden: 4,
    })
    .unwrap()
}

/// Identity initialization plus a uniform perturbation, so every head is active.
fn perturbed_theta(flow: &Flow, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    flow.identity_init(rng.gen())
        .into_iter()
        .map(|v| v + rng.gen_range(-scale..scale))
        .collect()
}

fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[j] += h;
        m[j] -= h;
        let (fp, fm) = (f(&p), f(&m));
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    // transpose to rows
    (0..cols[0].len()).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

#[test]
fn criterion_01_flow_correctness() {
    let started = Instant::now();
    let flow = bench_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let mut roundtrip: f64 = 0.0;
    for _ in 0..1000 {
        let theta = perturbed_theta(&flow, &mut rng, 0.5);
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let y = flow.forward(&theta, &x, &x0).unwrap().y;
        let back = flow.inverse(&theta, &y, &x0).unwrap();
        roundtrip = roundtrip.max((back[0] - x[0]).abs()).max((back[1] - x[1]).abs());
    }

    let mut det_err: f64 = 0.0;
    for _ in 0..200 {
        let theta = perturbed_theta(&flow, &mut rng, 0.5);
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let j = fd_jacobian(|p| flow.forward(&theta, p, &x0).unwrap().y, &x, 1e-5);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let ld = flow.forward(&theta, &x, &x0).unwrap().log_det;
        det_err = det_err.max((ld.exp() - det).abs() / det.abs());
    }

    let mut ident: f64 = 0.0;
    for seed in 0..20 {
        let theta = flow.identity_init(seed);
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let e = flow.forward(&theta, &x, &x0).unwrap();
        ident = ident.max((e.y[0] - x[0]).abs()).max((e.y[1] - x[1]).abs()).max(e.log_det.abs());
    }

    // each coupling copies its idle coordinate: the Jacobian row of the idle
    // output is a unit vector, so the layer Jacobian is triangular
    let mut tri: f64 = 0.0;
    for _ in 0..50 {
        let theta = perturbed_theta(&flow, &mut rng, 0.5);
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        for layer in 0..10 {
            let j = fd_jacobian(|p| flow.couple_forward(layer, &theta, p, &x0).0, &x, 1e-6);
            let idle = if layer % 2 == 0 { 0 } else { 1 };
            let active = 1 - idle;
            tri = tri.max(j[idle][active].abs()).max((j[idle][idle] - 1.0).abs());
            let ld = flow.couple_forward(layer, &theta, &x, &x0).1;
            tri = tri.max((ld.exp() - j[active][active]).abs() / j[active][active]);
        }
    }

    let passed = roundtrip < 1e-9 && det_err < 1e-5 && ident < 1e-14 && tri < 1e-6;
    report(
        "1",
        "flow correctness",
        passed,
        format!(
            "roundtrip {roundtrip:.2e} (<1e-9), det {det_err:.2e} (<1e-5), identity {ident:.2e}, triangular {tri:.2e}, {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_02_derivative_contracts() {
    let started = Instant::now();
    let flow = bench_flow();
    let model = RotatedBenes::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut e_theta, mut e_grad, mut e_hess): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let theta = perturbed_theta(&flow, &mut rng, 0.3);
        let tau = rng.gen_range(0.1..3.0);
        let x0 = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
        let x = [x0[0] + rng.gen_range(-1.0..1.0), x0[1] + rng.gen_range(-1.0..1.0)];
        let src = SourceGaussian::new(&model, 0.0, tau, &x0).unwrap();
        let value = |th: &[f64], p: &[f64]| {
            let e = flow.forward(th, p, &x0).unwrap();
            (src.log_density(&e.y) + e.log_det).exp()
        };

        // parameter gradient: one Galerkin row at a single sample pair
        let pair = SamplePair { x: x.to_vec(), x0: x0.to_vec() };
        let sys = assemble(&flow, &model, &theta, 0.0, tau, &[pair]).unwrap();
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..flow.param_count() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let fd = (value(&tp, &x) - value(&tm, &x)) / (2.0 * h);
            num += (sys.row(0)[k] - fd).powi(2);
            den += fd * fd;
        }
        e_theta = e_theta.max((num / den).sqrt());

        let de = flow_density(&flow, &model, &theta, 0.0, tau, &x0, &x).unwrap();
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..2 {
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            let fd = (value(&theta, &p) - value(&theta, &m)) / (2.0 * h);
            num += (de.grad[i] - fd).powi(2);
            den += fd * fd;
        }
        e_grad = e_grad.max((num / den).sqrt());

        let h = 1e-3;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let at = |si: f64, sj: f64| {
                    let mut q = x;
                    q[i] += si * h;
                    q[j] += sj * h;
                    value(&theta, &q)
                };
                let fd = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
                num += (de.hess[i][j] - fd).powi(2);
                den += fd * fd;
            }
        }
        e_hess = e_hess.max((num / den).sqrt());
    }
    let passed = e_theta < 1e-4 && e_grad < 1e-4 && e_hess < 1e-4;
    report(
        "2",
        "derivative contracts",
        passed,
        format!(
            "grad_theta {e_theta:.2e}, grad_x {e_grad:.2e}, hess_x {e_hess:.2e} (each <1e-4), {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_03_heat_kernel_exactness() {
    let flow = bench_flow();
    let theta = flow.identity_init(3);
    let model = Brownian::new(2);
    let cfg = GalerkinConfig {
        n_samples: 2000,
        seed: 3,
        ..GalerkinConfig::default()
    };
    let (mut rhs_max, mut res_max): (f64, f64) = (0.0, 0.0);
    for (round, tau) in [0.003, 0.05, 0.5, 1.0, 3.0].into_iter().enumerate() {
        let pairs = sample_pairs(&flow, &model, &theta, 0.0, tau, &cfg, round as u64).unwrap();
        let sys = assemble(&flow, &model, &theta, 0.0, tau, &pairs).unwrap();
        rhs_max = sys.rhs.iter().fold(rhs_max, |m, r| m.max(r.abs()));
        res_max = res_max.max(sys.residual_norm(&vec![0.0; sys.cols]));
    }
    let passed = rhs_max < 1e-8 && res_max < 1e-12;
    report(
        "3",
        "heat-kernel exactness",
        passed,
        format!("max |f_i| {rhs_max:.2e} (<1e-8), residual {res_max:.2e} (<1e-12)"),
    );
    assert!(passed);
}

#[test]
fn criterion_04_brownian_stationarity() {
    let started = Instant::now();
    let cfg = RunConfig::parse("model.id = brownian\nseed = 4").unwrap();
    let ck = train(&cfg, |_| {}).unwrap();
    let first = ck.row(0).to_vec();
    let drift = (0..ck.rows())
        .map(|k| ck.row(k).iter().zip(&first).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let (lo, hi) = ck.tau_range();
    let passed = drift < 1e-3 && hi == 3.0;
    report(
        "4",
        "Brownian stationarity",
        passed,
        format!(
            "max |theta(tau) - theta(eps)| {drift:.2e} (<1e-3) over [{lo}, {hi}], {} rows, {:.1}s",
            ck.rows(),
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_05_benes_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let h = 1e-4;
    let mut residual: f64 = 0.0;
    for _ in 0..100 {
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let x = [x0[0] + rng.gen_range(-2.0..2.0), x0[1] + rng.gen_range(-2.0..2.0)];
        let tau = rng.gen_range(0.2..3.0);
        let rho = |y: [f64; 2], t: f64| benes_exact_identity(&y, t, &x0).unwrap();
        let mut r = (rho(x, tau + h) - rho(x, tau - h)) / (2.0 * h);
        for i in 0..2 {
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            r += (p[i].tanh() * rho(p, tau) - m[i].tanh() * rho(m, tau)) / (2.0 * h);
            r -= 0.5 * (rho(p, tau) - 2.0 * rho(x, tau) + rho(m, tau)) / (h * h);
        }
        residual = residual.max(r.abs());
    }

    // wide enough for the t = 3 density started off-centre
    let grid = GridSpec::square(14.0, 281);
    let pts = grid.points();
    let model = RotatedBenes::standard();
    let mut mass_err: f64 = 0.0;
    for (tau, x0) in [(1.0, [0.0, 0.0]), (3.0, [0.0, 0.0]), (3.0, [1.5, -1.0])] {
        let id: Vec<f64> = pts.iter().map(|p| benes_exact_identity(p, tau, &x0).unwrap()).collect();
        let rot: Vec<f64> = pts.iter().map(|p| model.exact(p, tau, &x0).unwrap()).collect();
        mass_err = mass_err.max((grid.integrate(&id) - 1.0).abs()).max((grid.integrate(&rot) - 1.0).abs());
    }

    let r = model.rotation();
    let apply = |y: [f64; 2]| [r[0][0] * y[0] + r[0][1] * y[1], r[1][0] * y[0] + r[1][1] * y[1]];
    let mut cov: f64 = 0.0;
    for _ in 0..100 {
        let y = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let y0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let tau = rng.gen_range(0.1..3.0);
        let a = model.exact(&apply(y), tau, &apply(y0)).unwrap();
        let b = benes_exact_identity(&y, tau, &y0).unwrap();
        cov = cov.max((a - b).abs() / b);
    }
    let passed = residual < 1e-4 && mass_err < 1e-3 && cov < 1e-12;
    report(
        "5",
        "Benes exact-solution oracle",
        passed,
        format!("FP residual {residual:.2e} (<1e-4), mass error {mass_err:.2e} (<1e-3), rotation identity {cov:.2e}"),
    );
    assert!(passed);
}

#[test]
fn criterion_06_short_time_consistency() {
    let model = RotatedBenes::standard();
    let grid = GridSpec::error_default();
    let pts = grid.points();
    let errs: Vec<f64> = [0.2, 0.1, 0.05, 0.01]
        .iter()
        .map(|&tau| {
            let src = SourceGaussian::new(&model, 0.0, tau, &[0.0, 0.0]).unwrap();
            let a: Vec<f64> = pts.iter().map(|p| src.density(p)).collect();
            let e: Vec<f64> = pts.iter().map(|p| model.exact(p, tau, &[0.0, 0.0]).unwrap()).collect();
            relative_l2(&grid, &a, &e)
        })
        .collect();
    let passed = errs.windows(2).all(|w| w[1] < w[0]);
    report(
        "6",
        "short-time consistency",
        passed,
        format!(
            "errors at tau 0.2, 0.1, 0.05, 0.01: {}",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
    assert!(passed);
}

/// Seed of the desk-scale training run the thresholds below were calibrated with.
const TRAIN_SEED: u64 = 1;
/// Calibration constants: implementation targets, not published values.
const ERR_AT_0_1: f64 = 0.1;
const ERR_BOUND_LATE: f64 = 0.5;

struct Trained {
    sur: Surrogate,
    seconds: f64,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = RunConfig::parse(&format!("seed = {TRAIN_SEED}")).unwrap();
        let started = Instant::now();
        let ck = train(&cfg, |_| {}).expect("desk-scale training");
        Trained {
            sur: Surrogate::new(ck).unwrap(),
            seconds: started.elapsed().as_secs_f64(),
        }
    })
}

fn late_errors(sur: &Surrogate) -> Vec<(f64, f64)> {
    let grid = GridSpec::error_default();
    [0.5, 1.0, 2.0, 3.0]
        .iter()
        .map(|&t| (t, sur.relative_l2_error(t, &[0.0, 0.0], &grid).unwrap()))
        .collect()
}

#[test]
fn criterion_07_desk_scale_benes_training() {
    let t = trained();
    let grid = GridSpec::error_default();
    let early = t.sur.relative_l2_error(0.1, &[0.0, 0.0], &grid).unwrap();
    let late = late_errors(&t.sur);
    let ok_a = early < ERR_AT_0_1;
    let ok_b = late.iter().all(|&(_, e)| e.is_finite() && e <= ERR_BOUND_LATE);
    let unseen = t.sur.relative_l2_error(3.0, &[1.5, -1.0], &grid).unwrap();
    report(
        "7a",
        "Benes training, error at t = 0.1",
        ok_a,
        format!("{early:.4} (<{ERR_AT_0_1}), seed {TRAIN_SEED}, trained in {:.0}s", t.seconds),
    );
    report(
        "7b",
        "Benes training, error curve t in {0.5, 1, 2, 3}",
        ok_b,
        format!(
            "{} (each <={ERR_BOUND_LATE}); unseen x0 = [1.5, -1] at t = 3: {unseen:.4}",
            late.iter().map(|(t, e)| format!("{t}: {e:.4}")).collect::<Vec<_>>().join(", ")
        ),
    );
    assert!(ok_a && ok_b);
}

#[test]
fn criterion_08_convolution_experiment() {
    let t = trained();
    let sur = &t.sur;
    let started = Instant::now();
    let p0 = MixtureInit::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let init: Vec<Vec<f64>> = (0..1750).map(|_| p0.sample(&mut rng).to_vec()).collect();
    let grid = GridSpec::square(10.0, 61);
    let pts: Vec<Vec<f64>> = grid.points().iter().map(|p| p.to_vec()).collect();
    let time = 3.0;
    let flow = sur.green_convolve(&pts, time, &init).unwrap();
    let exact = sur.exact_convolve(&pts, time, &init).unwrap();
    let disc = relative_l2(&grid, &flow, &exact);
    let single = late_errors(sur).iter().find(|(t, _)| *t == time).unwrap().1;
    let passed = disc < 2.0 * single;
    report(
        "8",
        "mixture convolution",
        passed,
        format!(
            "flow vs exact kernel at t = {time}: {disc:.4} (< 2 x {single:.4}), {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_09_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.cfg");
    std::fs::write(
        &cfg_path,
        "flow.layers = 4\nflow.hidden = 2\ngalerkin.samples = 300\nhorizon.end = 0.5\nseed = 9\n",
    )
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_galerkin-flow");
    let mut files = Vec::new();
    for name in ["a.ngnf", "b.ngnf"] {
        let out = dir.path().join(name);
        let status = std::process::Command::new(exe)
            .args(["train", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        files.push(std::fs::read(&out).unwrap());
    }
    let identical = files[0] == files[1];

    let ck = Checkpoint::from_bytes(&files[0]).unwrap();
    let path = dir.path().join("copy.ngnf");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let roundtrip = back == ck && std::fs::read(&path).unwrap() == files[0];
    let rows_equal = (0..ck.rows()).all(|k| {
        back.row(k).iter().zip(ck.row(k)).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let passed = identical && roundtrip && rows_equal;
    report(
        "9",
        "reproducibility",
        passed,
        format!(
            "repeated train identical: {identical}, save/load bit-exact: {}, {} bytes",
            roundtrip && rows_equal,
            files[0].len()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_10_ode_order() {
    let exact = |tau: f64| (-(tau - 0.1)).exp();
    let mut pts = Vec::new();
    for k in 0..8 {
        let rtol = 1e-3 * 0.3f64.powi(k);
        let cfg = IntegratorConfig {
            t_start: 0.1,
            t_end: 3.0,
            rtol,
            atol: 1e-3 * rtol,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1.0,
            stride: 1,
        };
        let mut decay = |th: &[f64], _: f64| th.iter().map(|v| -v).collect::<Vec<_>>();
        let tr = integrate(&[1.0, -0.5], &mut decay, &cfg, |_, _| {}).unwrap();
        let err = tr
            .last()
            .iter()
            .zip([1.0, -0.5])
            .map(|(a, b)| (a - b * exact(3.0)).abs())
            .fold(0.0, f64::max);
        pts.push(((tr.accepted as f64).ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let order = -slope;
    let passed = order >= 2.5;
    report("10", "ODE order", passed, format!("observed order {order:.2} (>=2.5) over 8 tolerances"));
    assert!(passed);
}
