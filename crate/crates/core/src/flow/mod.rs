//! Conditional Real-NVP flow with GRU-parameterized scale and shift networks.
//!
//! Layer `l` (counted from 0) copies an idle block of `m` coordinates and
//! applies `x <- x * (1 + beta * tanh(s)) + exp(xi) * tanh(t)` to the remaining
//! `d - m`, where `s` and `t` are networks of `(x_idle, x0)`. Odd layers work on
//! the reversed state vector, so consecutive layers transform complementary
//! blocks.

mod config;
mod network;

pub use config::{FlowConfig, LayerLayout, Layout, NetLayout, Slice};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::jet::Scalar;
use network::NetTrace;

/// Output of a forward pass: the mapped point and `log |det grad_x n(x | x0)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEval {
    pub y: Vec<f64>,
    pub log_det: f64,
}

/// Parameter derivatives of the mapped point and of the log-determinant.
#[derive(Debug, Clone)]
pub struct ThetaJacobian {
    /// `dy[i][k] = d y_i / d theta_k`.
    pub dy: Vec<Vec<f64>>,
    pub dlog_det: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    config: FlowConfig,
    layout: Layout,
}

struct LayerTrace {
    idle: Vec<f64>,
    active_in: Vec<f64>,
    c: Vec<f64>,
    s: Vec<f64>,
    t: Vec<f64>,
    s_trace: NetTrace,
    t_trace: NetTrace,
}

impl Flow {
    pub fn new(config: FlowConfig) -> Result<Self> {
        let layout = Layout::new(&config)?;
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Coordinate of the state touched by local index `k` of layer `l`.
    #[inline]
    fn coord(&self, l: usize, k: usize) -> usize {
        if l % 2 == 1 {
            self.config.dim - 1 - k
        } else {
            k
        }
    }

    pub(crate) fn check(&self, theta: &[f64], x: &[f64], x0: &[f64]) -> Result<()> {
        let d = self.config.dim;
        if theta.len() != self.layout.len() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, layout expects {}",
                theta.len(),
                self.layout.len()
            )));
        }
        if x.len() != d || x0.len() != d {
            return Err(Error::Config(format!(
                "point dimensions ({}, {}) do not match flow dimension {d}",
                x.len(),
                x0.len()
            )));
        }
        if x.iter().chain(x0).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("x = {x:?}, x0 = {x0:?}")));
        }
        Ok(())
    }

    /// Draws the initial parameters: zero heads and zero `xi` (so the flow is
    /// the identity) and small seeded GRU internals.
    pub fn identity_init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.layout.len()];
        let amp = 0.1 / (self.config.hidden as f64).sqrt();
        for layer in self.layout.layers() {
            for net in [&layer.scale, &layer.shift] {
                for v in &mut theta[net.cell_range()] {
                    *v = rng.gen_range(-amp..=amp);
                }
            }
        }
        theta
    }

    /// Raw scale and shift network outputs of layer `layer` (0-based) for a
    /// conditioning vector `c = (x_idle, x0)`, before the `tanh`.
    pub fn scale_shift(&self, layer: usize, theta: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(c.len(), self.config.cond_len(), "conditioning vector length");
        let ll = self.layout.layer(layer);
        let m = self.config.split;
        let mut s = vec![0.0; self.config.active()];
        let mut t = vec![0.0; self.config.active()];
        network::forward(&ll.scale, theta, &c[..m], &c[m..], &mut s);
        network::forward(&ll.shift, theta, &c[..m], &c[m..], &mut t);
        (s, t)
    }

    fn layer_apply<S: Scalar>(
        &self,
        l: usize,
        theta: &[f64],
        state: &mut [S],
        x0: &[f64],
        log_det: &mut S,
    ) {
        let m = self.config.split;
        let beta = self.config.beta;
        let ll = self.layout.layer(l);
        let idle: Vec<S> = (0..m).map(|k| state[self.coord(l, k)]).collect();
        let mut s = vec![S::constant(0.0); self.config.active()];
        let mut t = vec![S::constant(0.0); self.config.active()];
        network::forward(&ll.scale, theta, &idle, x0, &mut s);
        network::forward(&ll.shift, theta, &idle, x0, &mut t);
        for k in 0..self.config.active() {
            let g = self.coord(l, m + k);
            let scale = s[k].tanh() * beta + 1.0;
            let shift = t[k].tanh() * theta[ll.xi.start + k].exp();
            state[g] = state[g] * scale + shift;
            *log_det = *log_det + scale.ln();
        }
    }

    /// Applies coupling layer `layer` (0-based) and returns its log-determinant factor.
    pub fn couple_forward(
        &self,
        layer: usize,
        theta: &[f64],
        x_prev: &[f64],
        x0: &[f64],
    ) -> (Vec<f64>, f64) {
        let mut state = x_prev.to_vec();
        let mut ld = 0.0;
        self.layer_apply(layer, theta, &mut state, x0, &mut ld);
        (state, ld)
    }

    pub fn couple_inverse(&self, layer: usize, theta: &[f64], z: &[f64], x0: &[f64]) -> Vec<f64> {
        let m = self.config.split;
        let beta = self.config.beta;
        let ll = self.layout.layer(layer);
        let mut state = z.to_vec();
        let idle: Vec<f64> = (0..m).map(|k| state[self.coord(layer, k)]).collect();
        let mut s = vec![0.0; self.config.active()];
        let mut t = vec![0.0; self.config.active()];
        network::forward(&ll.scale, theta, &idle, x0, &mut s);
        network::forward(&ll.shift, theta, &idle, x0, &mut t);
        for k in 0..self.config.active() {
            let g = self.coord(layer, m + k);
            let scale = 1.0 + beta * s[k].tanh();
            let shift = theta[ll.xi.start + k].exp() * t[k].tanh();
            state[g] = (state[g] - shift) / scale;
        }
        state
    }

    /// Forward map on any scalar type; `x0` only conditions and carries no derivatives.
    pub fn forward_generic<S: Scalar>(&self, theta: &[f64], x: &[S], x0: &[f64]) -> (Vec<S>, S) {
        let mut state = x.to_vec();
        let mut ld = S::constant(0.0);
        for l in 0..self.config.layers {
            self.layer_apply(l, theta, &mut state, x0, &mut ld);
        }
        (state, ld)
    }

    pub fn forward(&self, theta: &[f64], x: &[f64], x0: &[f64]) -> Result<FlowEval> {
        self.check(theta, x, x0)?;
        let (y, log_det) = self.forward_generic(theta, x, x0);
        Ok(FlowEval { y, log_det })
    }

    /// States after each layer, starting with the input itself.
    pub fn layer_states(&self, theta: &[f64], x: &[f64], x0: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(theta, x, x0)?;
        let mut states = vec![x.to_vec()];
        let mut ld = 0.0;
        for l in 0..self.config.layers {
            let mut next = states[l].clone();
            self.layer_apply(l, theta, &mut next, x0, &mut ld);
            states.push(next);
        }
        Ok(states)
    }

    pub fn inverse(&self, theta: &[f64], z: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
        self.check(theta, z, x0)?;
        let mut state = z.to_vec();
        for l in (0..self.config.layers).rev() {
            state = self.couple_inverse(l, theta, &state, x0);
        }
        Ok(state)
    }

    fn forward_traced(&self, theta: &[f64], x: &[f64], x0: &[f64]) -> (FlowEval, Vec<LayerTrace>) {
        let m = self.config.split;
        let a = self.config.active();
        let beta = self.config.beta;
        let mut state = x.to_vec();
        let mut log_det = 0.0;
        let mut traces = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let ll = self.layout.layer(l);
            let idle: Vec<f64> = (0..m).map(|k| state[self.coord(l, k)]).collect();
            let active_in: Vec<f64> = (0..a).map(|k| state[self.coord(l, m + k)]).collect();
            let mut c = idle.clone();
            c.extend_from_slice(x0);
            let mut s = vec![0.0; a];
            let mut t = vec![0.0; a];
            let s_trace = network::forward_traced(&ll.scale, theta, &c, &mut s);
            let t_trace = network::forward_traced(&ll.shift, theta, &c, &mut t);
            for k in 0..a {
                let scale = 1.0 + beta * s[k].tanh();
                let shift = theta[ll.xi.start + k].exp() * t[k].tanh();
                state[self.coord(l, m + k)] = active_in[k] * scale + shift;
                log_det += scale.ln();
            }
            traces.push(LayerTrace {
                idle,
                active_in,
                c,
                s,
                t,
                s_trace,
                t_trace,
            });
        }
        (FlowEval { y: state, log_det }, traces)
    }

    /// Vector-Jacobian product: gradient of `seed_y . y + seed_log_det * log_det`
    /// with respect to the parameters, together with the forward result.
    pub fn vjp(
        &self,
        theta: &[f64],
        x: &[f64],
        x0: &[f64],
        seed_y: &[f64],
        seed_log_det: f64,
    ) -> Result<(FlowEval, Vec<f64>)> {
        self.check(theta, x, x0)?;
        let m = self.config.split;
        let a = self.config.active();
        let beta = self.config.beta;
        let (eval, traces) = self.forward_traced(theta, x, x0);
        let mut grad = vec![0.0; theta.len()];
        let mut d_state = seed_y.to_vec();
        let mut d_s = vec![0.0; a];
        let mut d_t = vec![0.0; a];
        for (l, tr) in traces.iter().enumerate().rev() {
            let ll = self.layout.layer(l);
            for k in 0..a {
                let g = self.coord(l, m + k);
                let d_out = d_state[g];
                let ts = tr.s[k].tanh();
                let tt = tr.t[k].tanh();
                let scale = 1.0 + beta * ts;
                let ex = theta[ll.xi.start + k].exp();
                d_state[g] = d_out * scale;
                let d_scale = d_out * tr.active_in[k] + seed_log_det / scale;
                d_s[k] = d_scale * beta * (1.0 - ts * ts);
                d_t[k] = d_out * ex * (1.0 - tt * tt);
                grad[ll.xi.start + k] += d_out * ex * tt;
            }
            let mut d_idle = vec![0.0; m];
            network::backward(&ll.scale, theta, &tr.c, &tr.s_trace, &d_s, &mut grad, &mut d_idle);
            network::backward(&ll.shift, theta, &tr.c, &tr.t_trace, &d_t, &mut grad, &mut d_idle);
            debug_assert_eq!(tr.idle.len(), m);
            for (k, di) in d_idle.iter().enumerate() {
                d_state[self.coord(l, k)] += di;
            }
        }
        Ok((eval, grad))
    }

    /// Full parameter Jacobian of the mapped point and of the log-determinant.
    pub fn grad_theta(&self, theta: &[f64], x: &[f64], x0: &[f64]) -> Result<ThetaJacobian> {
        let d = self.config.dim;
        let mut dy = Vec::with_capacity(d);
        for i in 0..d {
            let mut seed = vec![0.0; d];
            seed[i] = 1.0;
            dy.push(self.vjp(theta, x, x0, &seed, 0.0)?.1);
        }
        let dlog_det = self.vjp(theta, x, x0, &vec![0.0; d], 1.0)?.1;
        Ok(ThetaJacobian { dy, dlog_det })
    }
}
