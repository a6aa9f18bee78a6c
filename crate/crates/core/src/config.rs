//! Run configuration: every knob of a training run in one flat document.

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::galerkin::{GalerkinConfig, Ridge};
use crate::integrator::IntegratorConfig;
use crate::kv::KvDoc;
use crate::sde::ModelSpec;

const KEYS: &[&str] = &[
    "model.id",
    "model.angle",
    "flow.dim",
    "flow.layers",
    "flow.split",
    "flow.beta",
    "flow.hidden",
    "galerkin.samples",
    "galerkin.mu_std",
    "galerkin.ridge",
    "galerkin.ridge_factor",
    "integrator.t_start",
    "integrator.rtol",
    "integrator.atol",
    "integrator.h_init",
    "integrator.h_min",
    "integrator.h_max",
    "integrator.stride",
    "horizon.start",
    "horizon.end",
    "seed",
    "output.checkpoint",
    "output.log",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub flow: FlowConfig,
    pub galerkin: GalerkinConfig,
    /// Times are elapsed time `tau = t - s`.
    pub integrator: IntegratorConfig,
    /// Start `s` of the transition.
    pub start: f64,
    /// Final time `T`.
    pub end: f64,
    pub seed: u64,
    pub checkpoint_path: Option<String>,
    pub log_path: Option<String>,
}

impl RunConfig {
    /// Benchmark defaults: rotated Beneš, ten layers of hidden size four on `[0, 3]`.
    pub fn benes_default() -> Self {
        Self::from_doc(&KvDoc::new()).expect("defaults are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_doc(&KvDoc::parse(text)?)
    }

    pub fn from_doc(doc: &KvDoc) -> Result<Self> {
        doc.check_keys(KEYS, &[])?;
        let start: f64 = doc.get_or("horizon.start", 0.0)?;
        let end: f64 = doc.get_or("horizon.end", 3.0)?;
        if !(start >= 0.0) || !(end > start) || !end.is_finite() {
            return Err(Error::Config(format!("need 0 <= horizon.start < horizon.end, got {start} and {end}")));
        }
        let flow = FlowConfig {
            dim: doc.get_or("flow.dim", 2)?,
            layers: doc.get_or("flow.layers", 10)?,
            split: doc.get_or("flow.split", 1)?,
            beta: doc.get_or("flow.beta", FlowConfig::DEFAULT_BETA)?,
            hidden: doc.get_or("flow.hidden", 4)?,
        };
        flow.validate()?;
        let model = ModelSpec::from_doc(doc, flow.dim)?;
        let seed: u64 = doc.get_or("seed", 0)?;
        let ridge = match doc.get_str("galerkin.ridge").unwrap_or("auto") {
            "auto" => Ridge::Auto {
                factor: doc.get_or("galerkin.ridge_factor", Ridge::DEFAULT_FACTOR)?,
            },
            raw => {
                if doc.contains("galerkin.ridge_factor") {
                    return Err(Error::Config("galerkin.ridge_factor only applies to `galerkin.ridge = auto`".into()));
                }
                Ridge::Fixed(
                    raw.parse()
                        .map_err(|_| Error::Config(format!("galerkin.ridge: expected `auto` or a number, got `{raw}`")))?,
                )
            }
        };
        let galerkin = GalerkinConfig {
            n_samples: doc.get_or("galerkin.samples", 2000)?,
            mu_std: doc.get_or("galerkin.mu_std", 0.75)?,
            ridge,
            seed,
        };
        galerkin.validate()?;
        let base = IntegratorConfig::for_span(end - start);
        let integrator = IntegratorConfig {
            t_start: doc.get_or("integrator.t_start", base.t_start)?,
            t_end: base.t_end,
            rtol: doc.get_or("integrator.rtol", base.rtol)?,
            atol: doc.get_or("integrator.atol", base.atol)?,
            h_init: doc.get_or("integrator.h_init", base.h_init)?,
            h_min: doc.get_or("integrator.h_min", base.h_min)?,
            h_max: doc.get_or("integrator.h_max", base.h_max)?,
            stride: doc.get_or("integrator.stride", base.stride)?,
        };
        integrator.validate()?;
        Ok(Self {
            model,
            flow,
            galerkin,
            integrator,
            start,
            end,
            seed,
            checkpoint_path: doc.get_str("output.checkpoint").map(str::to_string),
            log_path: doc.get_str("output.log").map(str::to_string),
        })
    }

    /// Fully resolved settings, output paths excluded. Parsing the result
    /// gives back an equal configuration.
    pub fn to_doc(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        self.model.write(&mut doc);
        doc.set("flow.dim", self.flow.dim);
        doc.set("flow.layers", self.flow.layers);
        doc.set("flow.split", self.flow.split);
        doc.set("flow.beta", self.flow.beta);
        doc.set("flow.hidden", self.flow.hidden);
        doc.set("galerkin.samples", self.galerkin.n_samples);
        doc.set("galerkin.mu_std", self.galerkin.mu_std);
        match self.galerkin.ridge {
            Ridge::Auto { factor } => {
                doc.set("galerkin.ridge", "auto");
                doc.set("galerkin.ridge_factor", factor);
            }
            Ridge::Fixed(v) => doc.set("galerkin.ridge", v),
        }
        let ic = &self.integrator;
        doc.set("integrator.t_start", ic.t_start);
        doc.set("integrator.rtol", ic.rtol);
        doc.set("integrator.atol", ic.atol);
        doc.set("integrator.h_init", ic.h_init);
        doc.set("integrator.h_min", ic.h_min);
        doc.set("integrator.h_max", ic.h_max);
        doc.set("integrator.stride", ic.stride);
        doc.set("horizon.start", self.start);
        doc.set("horizon.end", self.end);
        doc.set("seed", self.seed);
        doc
    }

    /// Resolved settings with output paths stripped, for comparing runs.
    pub fn without_outputs(&self) -> Self {
        Self {
            checkpoint_path: None,
            log_path: None,
            ..self.clone()
        }
    }
}
