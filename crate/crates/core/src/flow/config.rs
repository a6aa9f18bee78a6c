use std::ops::Range;

use crate::error::{Error, Result};

/// Structural hyperparameters of the conditional coupling flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Spatial dimension `d`.
    pub dim: usize,
    /// Number of coupling layers (even).
    pub layers: usize,
    /// Size `m` of the idle block of each layer.
    pub split: usize,
    /// Bound on the multiplicative part of each affine step, `0 < beta < 1`.
    pub beta: f64,
    /// Hidden size of the GRU cells.
    pub hidden: usize,
}

impl FlowConfig {
    pub const DEFAULT_BETA: f64 = 0.9;

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("flow.dim = {} must be at least 2", self.dim)));
        }
        if self.layers < 2 || !self.layers.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "flow.layers = {} must be even and at least 2",
                self.layers
            )));
        }
        if self.split == 0 || self.split >= self.dim {
            return Err(Error::Config(format!(
                "flow.split = {} must satisfy 1 <= split < dim = {}",
                self.split, self.dim
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("flow.beta = {} must lie in (0, 1)", self.beta)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("flow.hidden must be positive".into()));
        }
        Ok(())
    }

    /// Width of the transformed block, `d - m`.
    pub fn active(&self) -> usize {
        self.dim - self.split
    }

    /// Length of the conditioning vector `(x_idle, x0)`.
    pub fn cond_len(&self) -> usize {
        self.split + self.dim
    }
}

/// Offsets of one GRU-plus-linear-head network inside the flat parameter vector.
///
/// Gate order inside the stacked GRU blocks is reset, update, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetLayout {
    pub offset: usize,
    pub n_in: usize,
    pub hidden: usize,
    pub n_out: usize,
}

impl NetLayout {
    pub const GATES: usize = 3;

    /// Input weights, `3h x n_in`, row-major.
    pub fn w_in(&self) -> usize {
        self.offset
    }
    /// Input biases, `3h`.
    pub fn b_in(&self) -> usize {
        self.w_in() + Self::GATES * self.hidden * self.n_in
    }
    /// Recurrent biases, `3h`.
    pub fn b_hid(&self) -> usize {
        self.b_in() + Self::GATES * self.hidden
    }
    /// Output head weights, `n_out x h`, row-major.
    pub fn w_out(&self) -> usize {
        self.b_hid() + Self::GATES * self.hidden
    }
    /// Output head biases, `n_out`.
    pub fn b_out(&self) -> usize {
        self.w_out() + self.n_out * self.hidden
    }
    pub fn end(&self) -> usize {
        self.b_out() + self.n_out
    }
    pub fn len(&self) -> usize {
        self.end() - self.offset
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Parameters of the recurrent cell (everything except the head).
    pub fn cell_range(&self) -> Range<usize> {
        self.offset..self.w_out()
    }
    pub fn head_range(&self) -> Range<usize> {
        self.w_out()..self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub scale: NetLayout,
    pub shift: NetLayout,
    /// Log-modulation `xi` of the shift, one entry per transformed coordinate.
    pub xi: Range<usize>,
}

/// A named contiguous slice of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub layer: usize,
    pub name: &'static str,
    pub range: Range<usize>,
}

/// Parameter manifest; a pure function of [`FlowConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    layers: Vec<LayerLayout>,
    len: usize,
}

impl Layout {
    pub fn new(config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut offset = 0;
        let net = |offset: &mut usize| {
            let n = NetLayout {
                offset: *offset,
                n_in: config.cond_len(),
                hidden: config.hidden,
                n_out: config.active(),
            };
            *offset = n.end();
            n
        };
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let scale = net(&mut offset);
            let shift = net(&mut offset);
            let xi = offset..offset + config.active();
            offset = xi.end;
            layers.push(LayerLayout { scale, shift, xi });
        }
        Ok(Self { layers, len: offset })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layer(&self, l: usize) -> &LayerLayout {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn slices(&self) -> Vec<Slice> {
        const SCALE: [&str; 5] = ["s.w_in", "s.b_in", "s.b_hid", "s.w_out", "s.b_out"];
        const SHIFT: [&str; 5] = ["t.w_in", "t.b_in", "t.b_hid", "t.w_out", "t.b_out"];
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (names, net) in [(SCALE, &layer.scale), (SHIFT, &layer.shift)] {
                let bounds = [net.w_in(), net.b_in(), net.b_hid(), net.w_out(), net.b_out(), net.end()];
                for (k, name) in names.into_iter().enumerate() {
                    out.push(Slice {
                        layer: l,
                        name,
                        range: bounds[k]..bounds[k + 1],
                    });
                }
            }
            out.push(Slice {
                layer: l,
                name: "xi",
                range: layer.xi.clone(),
            });
        }
        out
    }
}
