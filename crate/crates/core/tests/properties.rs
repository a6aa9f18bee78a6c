use proptest::prelude::*;

use galerkin_flow::benes::{relative_l2, GridSpec};
use galerkin_flow::checkpoint::Checkpoint;
use galerkin_flow::config::RunConfig;
use galerkin_flow::flow::{Flow, FlowConfig};
use galerkin_flow::kv::KvDoc;

fn flow_strategy() -> impl Strategy<Value = Flow> {
    (2usize..5, 1usize..4, 1usize..4, 0.1f64..0.95).prop_flat_map(|(dim, half_layers, hidden, beta)| {
        (1..dim).prop_map(move |split| {
            Flow::new(FlowConfig {
                dim,
                layers: 2 * half_layers,
                split,
                beta,
                hidden,
            })
            .unwrap()
        })
    })
}

fn case_strategy() -> impl Strategy<Value = (Flow, Vec<f64>, Vec<f64>, Vec<f64>)> {
    flow_strategy().prop_flat_map(|flow| {
        let m = flow.param_count();
        let d = flow.dim();
        (
            Just(flow),
            prop::collection::vec(-1.0f64..1.0, m),
            prop::collection::vec(-5.0f64..5.0, d),
            prop::collection::vec(-2.0f64..2.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_undoes_forward((flow, theta, x, x0) in case_strategy()) {
        let e = flow.forward(&theta, &x, &x0).unwrap();
        let back = flow.inverse(&theta, &e.y, &x0).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn log_det_is_bounded((flow, theta, x, x0) in case_strategy()) {
        let c = flow.config();
        let per = (1.0 + c.beta).ln().max(-(1.0 - c.beta).ln());
        let bound = (c.layers * c.active()) as f64 * per;
        let ld = flow.forward(&theta, &x, &x0).unwrap().log_det;
        prop_assert!(ld.abs() <= bound + 1e-12);
    }

    #[test]
    fn parameter_gradient_of_log_det_matches_difference((flow, theta, x, x0) in case_strategy(), k in any::<prop::sample::Index>()) {
        let k = k.index(flow.param_count());
        let jac = flow.grad_theta(&theta, &x, &x0).unwrap();
        let h = 1e-6;
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[k] += h;
        tm[k] -= h;
        let fd = (flow.forward(&tp, &x, &x0).unwrap().log_det - flow.forward(&tm, &x, &x0).unwrap().log_det) / (2.0 * h);
        prop_assert!((jac.dlog_det[k] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }

    #[test]
    fn kv_canonical_form_roundtrips(entries in prop::collection::btree_map("[a-z]{1,6}(\\.[a-z0-9_]{1,6}){0,2}", "[A-Za-z0-9_.,+-]{0,12}", 0..12)) {
        let mut doc = KvDoc::new();
        for (k, v) in &entries {
            doc.set(k, v);
        }
        let text = doc.to_canonical_string();
        let back = KvDoc::parse(&text).unwrap();
        prop_assert_eq!(back.to_canonical_string(), text);
    }

    #[test]
    fn checkpoints_roundtrip_bit_exactly(bits in prop::collection::vec(any::<u64>(), 1..4), rows in 2usize..6) {
        let cfg = RunConfig::parse("flow.layers = 2\nflow.hidden = 1\nhorizon.end = 2").unwrap();
        let m = Flow::new(cfg.flow).unwrap().param_count();
        let (a, b) = (cfg.integrator.t_start, cfg.integrator.t_end);
        let times: Vec<f64> = (0..rows).map(|i| if i + 1 == rows { b } else { a + (b - a) * i as f64 / (rows - 1) as f64 }).collect();
        let thetas: Vec<Vec<f64>> = (0..rows)
            .map(|r| (0..m).map(|j| {
                let v = f64::from_bits(bits[(r + j) % bits.len()]);
                if v.is_finite() { v } else { j as f64 }
            }).collect())
            .collect();
        let ck = Checkpoint::new(cfg, times, thetas.clone()).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        for (k, row) in thetas.iter().enumerate() {
            prop_assert!(back.row(k).iter().zip(row).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(back.theta_at(back.times[k]).unwrap(), row.clone());
        }
        prop_assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn relative_error_is_scale_invariant(vals in prop::collection::vec(0.0f64..1.0, 25), noise in prop::collection::vec(-0.1f64..0.1, 25), s in 1e-3f64..1e3) {
        prop_assume!(vals.iter().any(|v| *v > 1e-3));
        let grid = GridSpec { lo: [0.0, 0.0], hi: [1.0, 1.0], n: [5, 5] };
        let approx: Vec<f64> = vals.iter().zip(&noise).map(|(v, n)| v + n).collect();
        let e1 = relative_l2(&grid, &approx, &vals);
        let e2 = relative_l2(&grid, &approx.iter().map(|v| v * s).collect::<Vec<_>>(), &vals.iter().map(|v| v * s).collect::<Vec<_>>());
        prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
    }
}
