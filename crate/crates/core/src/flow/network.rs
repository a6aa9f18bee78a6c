//! One-step GRU cell (zero initial state) followed by a dense output head.
//!
//! With a zero initial hidden state the recurrent weight matrices drop out;
//! only the recurrent biases remain, the candidate bias being gated by the
//! reset gate as in the standard cell.

use super::config::NetLayout;
use crate::jet::{sigmoid, Scalar};

const R: usize = 0;
const Z: usize = 1;
const N: usize = 2;

#[inline]
fn row(net: &NetLayout, gate: usize, j: usize) -> usize {
    net.w_in() + (gate * net.hidden + j) * net.n_in
}

/// Evaluates the network on `c = (idle, x0)`, where only `idle` carries derivatives.
pub(crate) fn forward<S: Scalar>(
    net: &NetLayout,
    theta: &[f64],
    idle: &[S],
    x0: &[f64],
    out: &mut [S],
) {
    let h = net.hidden;
    let m = idle.len();
    let mut hid: Vec<S> = Vec::with_capacity(h);
    for j in 0..h {
        let mut pre = [0.0; 3];
        let mut lin = [S::constant(0.0); 3];
        for gate in [R, Z, N] {
            let w = &theta[row(net, gate, j)..row(net, gate, j) + net.n_in];
            let mut acc = theta[net.b_in() + gate * h + j];
            for (wi, xi) in w[m..].iter().zip(x0) {
                acc += wi * xi;
            }
            pre[gate] = acc;
            let mut l = S::constant(0.0);
            for (wi, xi) in w[..m].iter().zip(idle) {
                l = l + *xi * *wi;
            }
            lin[gate] = l;
        }
        let b_hid = &theta[net.b_hid()..net.b_hid() + 3 * h];
        let r = (lin[R] + (pre[R] + b_hid[R * h + j])).sigmoid();
        let z = (lin[Z] + (pre[Z] + b_hid[Z * h + j])).sigmoid();
        let n = (lin[N] + pre[N] + r * b_hid[N * h + j]).tanh();
        hid.push(n - z * n);
    }
    for (k, o) in out.iter_mut().enumerate() {
        let w = &theta[net.w_out() + k * h..net.w_out() + (k + 1) * h];
        let mut acc = S::constant(theta[net.b_out() + k]);
        for (wj, hj) in w.iter().zip(&hid) {
            acc = acc + *hj * *wj;
        }
        *o = acc;
    }
}

/// Intermediate values of a plain forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct NetTrace {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hid: Vec<f64>,
}

pub(crate) fn forward_traced(
    net: &NetLayout,
    theta: &[f64],
    c: &[f64],
    out: &mut [f64],
) -> NetTrace {
    let h = net.hidden;
    let b_hid = &theta[net.b_hid()..net.b_hid() + 3 * h];
    let mut trace = NetTrace {
        r: vec![0.0; h],
        z: vec![0.0; h],
        n: vec![0.0; h],
        hid: vec![0.0; h],
    };
    for j in 0..h {
        let mut pre = [0.0; 3];
        for gate in [R, Z, N] {
            let w = &theta[row(net, gate, j)..row(net, gate, j) + net.n_in];
            pre[gate] = theta[net.b_in() + gate * h + j]
                + w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        }
        let r = sigmoid(pre[R] + b_hid[R * h + j]);
        let z = sigmoid(pre[Z] + b_hid[Z * h + j]);
        let n = (pre[N] + r * b_hid[N * h + j]).tanh();
        trace.r[j] = r;
        trace.z[j] = z;
        trace.n[j] = n;
        trace.hid[j] = (1.0 - z) * n;
    }
    for (k, o) in out.iter_mut().enumerate() {
        let w = &theta[net.w_out() + k * h..net.w_out() + (k + 1) * h];
        *o = theta[net.b_out() + k] + w.iter().zip(&trace.hid).map(|(a, b)| a * b).sum::<f64>();
    }
    trace
}

/// Accumulates parameter gradients into `grad` and input gradients into `d_c`.
pub(crate) fn backward(
    net: &NetLayout,
    theta: &[f64],
    c: &[f64],
    trace: &NetTrace,
    d_out: &[f64],
    grad: &mut [f64],
    d_c: &mut [f64],
) {
    let h = net.hidden;
    for (k, &dk) in d_out.iter().enumerate() {
        grad[net.b_out() + k] += dk;
        for j in 0..h {
            grad[net.w_out() + k * h + j] += dk * trace.hid[j];
        }
    }
    for j in 0..h {
        let d_hid: f64 = d_out
            .iter()
            .enumerate()
            .map(|(k, dk)| theta[net.w_out() + k * h + j] * dk)
            .sum();
        if d_hid == 0.0 {
            continue;
        }
        let (r, z, n) = (trace.r[j], trace.z[j], trace.n[j]);
        let d_n = d_hid * (1.0 - z);
        let d_z = -d_hid * n;
        let da_n = d_n * (1.0 - n * n);
        let da_z = d_z * z * (1.0 - z);
        let d_r = da_n * theta[net.b_hid() + N * h + j];
        grad[net.b_hid() + N * h + j] += da_n * r;
        let da_r = d_r * r * (1.0 - r);
        for (gate, da) in [(R, da_r), (Z, da_z), (N, da_n)] {
            grad[net.b_in() + gate * h + j] += da;
            if gate != N {
                grad[net.b_hid() + gate * h + j] += da;
            }
            let base = row(net, gate, j);
            for (i, ci) in c.iter().enumerate() {
                grad[base + i] += da * ci;
            }
            for (i, dci) in d_c.iter_mut().enumerate() {
                *dci += theta[base + i] * da;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand evaluation of a hidden-size-1 cell on a two-entry input.
    #[test]
    fn hidden_one_matches_hand_evaluation() {
        let net = NetLayout {
            offset: 0,
            n_in: 2,
            hidden: 1,
            n_out: 1,
        };
        // w_in rows r, z, n | b_in r z n | b_hid r z n | w_out | b_out
        let theta = [
            0.5, -0.3, 0.2, 0.4, -0.7, 0.1, 0.05, -0.02, 0.03, 0.01, 0.2, -0.4, 1.5, -0.25,
        ];
        assert_eq!(net.len(), theta.len());
        let c = [0.8, -1.1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let r = sig(0.5 * 0.8 - 0.3 * -1.1 + 0.05 + 0.01);
        let z = sig(0.2 * 0.8 + 0.4 * -1.1 - 0.02 + 0.2);
        let n = (-0.7 * 0.8 + 0.1 * -1.1 + 0.03 + r * -0.4).tanh();
        let expected = 1.5 * (1.0 - z) * n - 0.25;

        let mut out = [0.0];
        forward(&net, &theta, &c[..1], &c[1..], &mut out);
        assert!((out[0] - expected).abs() < 1e-15);
        let mut out2 = [0.0];
        forward_traced(&net, &theta, &c, &mut out2);
        assert!((out2[0] - expected).abs() < 1e-15);

        // a different conditioning vector gives a different output
        let mut out3 = [0.0];
        forward(&net, &theta, &[0.1], &[2.0], &mut out3);
        assert!((out3[0] - out[0]).abs() > 1e-3);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = NetLayout {
            offset: 3,
            n_in: 3,
            hidden: 2,
            n_out: 2,
        };
        let mut theta = vec![0.0; net.end() + 2];
        for (i, t) in theta.iter_mut().enumerate() {
            *t = ((i as f64 * 0.731).sin() * 0.9).clamp(-1.0, 1.0);
        }
        let c = [0.4, -0.9, 1.3];
        let w = [0.7, -1.3];
        let f = |th: &[f64], c: &[f64]| {
            let mut o = [0.0; 2];
            forward_traced(&net, th, c, &mut o);
            w[0] * o[0] + w[1] * o[1]
        };
        let mut o = [0.0; 2];
        let trace = forward_traced(&net, &theta, &c, &mut o);
        let mut grad = vec![0.0; theta.len()];
        let mut d_c = [0.0; 2];
        backward(&net, &theta, &c, &trace, &w, &mut grad, &mut d_c);

        let h = 1e-6;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            let mut q = theta.clone();
            p[i] += h;
            q[i] -= h;
            let fd = (f(&p, &c) - f(&q, &c)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..2 {
            let mut p = c;
            let mut q = c;
            p[i] += h;
            q[i] -= h;
            let fd = (f(&theta, &p) - f(&theta, &q)) / (2.0 * h);
            assert!((fd - d_c[i]).abs() < 1e-8);
        }
    }
}
