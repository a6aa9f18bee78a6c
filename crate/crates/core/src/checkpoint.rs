//! Persisted parameter trajectories.
//!
//! Layout, all integers little-endian:
//!
//! | bytes      | content                                              |
//! |------------|------------------------------------------------------|
//! | 4          | magic `NGNF`                                         |
//! | 4          | format version (`u32`)                               |
//! | 4          | header length `H` (`u32`)                            |
//! | H          | canonical `key = value` header (UTF-8)               |
//! | 8·K·M      | parameter rows, `f64`, row-major                     |
//! | 8          | FNV-1a 64 over header bytes followed by value bytes  |

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{Flow, FlowConfig};
use crate::integrator::Trajectory;
use crate::kv::KvDoc;

pub const MAGIC: &[u8; 4] = b"NGNF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Version of the software that wrote the file.
    pub build: String,
    /// Elapsed times `tau_k`, strictly increasing.
    pub times: Vec<f64>,
    /// Row `k` holds `theta(tau_k)`.
    thetas: Vec<f64>,
    cols: usize,
}

fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl Checkpoint {
    pub fn new(config: RunConfig, times: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = Flow::new(config.flow)?.param_count();
        if rows.len() != times.len() {
            return Err(Error::Header(format!("{} times but {} parameter rows", times.len(), rows.len())));
        }
        let mut thetas = Vec::with_capacity(rows.len() * cols);
        for r in &rows {
            if r.len() != cols {
                return Err(Error::ConfigMismatch(format!("row of length {} for {cols} parameters", r.len())));
            }
            thetas.extend_from_slice(r);
        }
        let ck = Self {
            config: config.without_outputs(),
            build: env!("CARGO_PKG_VERSION").to_string(),
            times,
            thetas,
            cols,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn from_trajectory(config: RunConfig, traj: Trajectory) -> Result<Self> {
        Self::new(config, traj.times, traj.thetas)
    }

    fn validate(&self) -> Result<()> {
        let k = self.times.len();
        if k == 0 {
            return Err(Error::Header("no parameter rows".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Header("times are not strictly increasing".into()));
        }
        let ic = &self.config.integrator;
        if self.times[0] != ic.t_start || self.times[k - 1] != ic.t_end {
            return Err(Error::Header(format!(
                "times span [{}, {}], configuration says [{}, {}]",
                self.times[0],
                self.times[k - 1],
                ic.t_start,
                ic.t_end
            )));
        }
        if let Some(i) = self.thetas.iter().position(|v| !v.is_finite()) {
            return Err(Error::Header(format!("non-finite parameter in row {}", i / self.cols)));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.times.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.thetas[k * self.cols..(k + 1) * self.cols]
    }

    pub fn tau_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Piecewise-linear interpolation of the stored trajectory.
    pub fn theta_at(&self, tau: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.tau_range();
        if !(tau >= lo && tau <= hi) {
            return Err(Error::Range { value: tau, lo, hi });
        }
        let k = self.times.partition_point(|&t| t <= tau);
        if k == 0 || self.times[k - 1] == tau {
            return Ok(self.row(k.saturating_sub(1)).to_vec());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (tau - t0) / (t1 - t0);
        Ok(self
            .row(k - 1)
            .iter()
            .zip(self.row(k))
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }

    /// Rejects checkpoints trained for a different flow architecture.
    pub fn expect_flow(&self, flow: &FlowConfig) -> Result<()> {
        if self.config.flow != *flow {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {:?}, expected {:?}",
                self.config.flow, flow
            )));
        }
        Ok(())
    }

    fn header(&self) -> KvDoc {
        let mut doc = self.config.to_doc();
        doc.set("meta.build", &self.build);
        doc.set("meta.rows", self.rows());
        doc.set("meta.cols", self.cols);
        doc.set_list("meta.times", &self.times);
        doc
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header().to_canonical_string().into_bytes();
        let mut values = Vec::with_capacity(8 * self.thetas.len());
        for v in &self.thetas {
            values.extend_from_slice(&v.to_le_bytes());
        }
        let mut out = Vec::with_capacity(12 + header.len() + values.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&values);
        out.extend_from_slice(&fnv1a64(&[&header, &values]).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, n: usize, what: &'static str| -> Result<&[u8]> {
            bytes.get(at..at + n).ok_or(Error::Truncated(what))
        };
        let u32_at = |at: usize, what| -> Result<u32> { Ok(u32::from_le_bytes(take(at, 4, what)?.try_into().unwrap())) };
        if take(0, 4, "magic")? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32_at(4, "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u32_at(8, "header length")? as usize;
        let header = take(12, hlen, "header")?;
        let text = std::str::from_utf8(header).map_err(|_| Error::Header("header is not UTF-8".into()))?;
        let mut doc = KvDoc::parse(text).map_err(|e| Error::Header(e.to_string()))?;
        let meta = |doc: &KvDoc, key: &str| -> Result<usize> {
            doc.get(key)
                .map_err(|e| Error::Header(e.to_string()))?
                .ok_or_else(|| Error::Header(format!("missing `{key}`")))
        };
        let rows = meta(&doc, "meta.rows")?;
        let cols = meta(&doc, "meta.cols")?;
        let nvals = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Header("size overflow".into()))?;
        let values = take(12 + hlen, nvals, "parameter values")?;
        let stored = u64::from_le_bytes(take(12 + hlen + nvals, 8, "checksum")?.try_into().unwrap());
        if bytes.len() != 12 + hlen + nvals + 8 {
            return Err(Error::Header(format!("{} trailing bytes", bytes.len() - (12 + hlen + nvals + 8))));
        }
        let computed = fnv1a64(&[header, values]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let times = doc
            .get_list("meta.times")
            .map_err(|e| Error::Header(e.to_string()))?
            .ok_or_else(|| Error::Header("missing `meta.times`".into()))?;
        let build = doc
            .get_str("meta.build")
            .ok_or_else(|| Error::Header("missing `meta.build`".into()))?
            .to_string();
        for key in ["meta.build", "meta.rows", "meta.cols", "meta.times"] {
            doc.remove(key);
        }
        let config = RunConfig::from_doc(&doc).map_err(|e| Error::Header(e.to_string()))?;
        let expected = Flow::new(config.flow)?.param_count();
        if expected != cols {
            return Err(Error::ConfigMismatch(format!(
                "header declares {cols} parameters, flow configuration has {expected}"
            )));
        }
        if times.len() != rows {
            return Err(Error::Header(format!("{} times for {rows} rows", times.len())));
        }
        let thetas = values
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ck = Self {
            config,
            build,
            times,
            thetas,
            cols,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the flow architecture in one go.
    pub fn load_expecting(path: impl AsRef<Path>, flow: &FlowConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.expect_flow(flow)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> RunConfig {
        RunConfig::parse("flow.layers = 2\nflow.hidden = 1\nhorizon.end = 1\nseed = 3").unwrap()
    }

    fn random_checkpoint(seed: u64, rows: usize) -> Checkpoint {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (cfg.integrator.t_start, cfg.integrator.t_end);
        let mut times: Vec<f64> = (0..rows).map(|i| a + (b - a) * i as f64 / (rows - 1) as f64).collect();
        times[rows - 1] = b;
        let m = Flow::new(cfg.flow).unwrap().param_count();
        let thetas = (0..rows).map(|_| (0..m).map(|_| rng.gen_range(-1e3..1e3) / 7.0).collect()).collect();
        Checkpoint::new(cfg, times, thetas).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(&[b""]), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(&[b"a"]), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(&[b"foo", b"bar"]), fnv1a64(&[b"foobar"]));
    }

    #[test]
    fn byte_roundtrip() {
        let ck = random_checkpoint(1, 7);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"NGNF");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ngnf");
        let ck = random_checkpoint(2, 3);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn corruption_is_detected() {
        let ck = random_checkpoint(3, 4);
        let bytes = ck.to_bytes();
        let payload_at = bytes.len() - 8 - 5;
        let mut bad = bytes.clone();
        bad[payload_at] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checksum { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::VersionMismatch { found: 2, expected: 1 })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..6]), Err(Error::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Header(_))));
    }

    #[test]
    fn flow_mismatch_is_typed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ngnf");
        let ck = random_checkpoint(4, 2);
        ck.save(&path).unwrap();
        let mut other = ck.config.flow;
        other.hidden = 4;
        assert!(matches!(Checkpoint::load_expecting(&path, &other), Err(Error::ConfigMismatch(_))));
        assert!(Checkpoint::load_expecting(&path, &ck.config.flow).is_ok());
    }

    #[test]
    fn interpolation() {
        let ck = random_checkpoint(5, 5);
        for k in 0..5 {
            assert_eq!(ck.theta_at(ck.times[k]).unwrap(), ck.row(k));
        }
        let mid = 0.5 * (ck.times[1] + ck.times[2]);
        let got = ck.theta_at(mid).unwrap();
        for (j, g) in got.iter().enumerate() {
            let want = 0.5 * (ck.row(1)[j] + ck.row(2)[j]);
            assert!((g - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        let (lo, hi) = ck.tau_range();
        assert!(matches!(ck.theta_at(lo * 0.5), Err(Error::Range { .. })));
        assert!(matches!(ck.theta_at(hi + 1e-9), Err(Error::Range { .. })));
        assert!(matches!(ck.theta_at(f64::NAN), Err(Error::Range { .. })));
    }

    #[test]
    fn interpolation_is_continuous() {
        let ck = random_checkpoint(6, 4);
        let (lo, hi) = ck.tau_range();
        let n = 2000;
        let mut prev = ck.theta_at(lo).unwrap();
        let bound = (1..ck.rows())
            .map(|k| ck.row(k).iter().zip(ck.row(k - 1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        for i in 1..=n {
            let tau = (lo + (hi - lo) * i as f64 / n as f64).min(hi);
            let cur = ck.theta_at(tau).unwrap();
            let jump = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(jump <= bound);
            prev = cur;
        }
    }

    #[test]
    fn invalid_trajectories_rejected() {
        let cfg = small_config();
        let m = Flow::new(cfg.flow).unwrap().param_count();
        let (a, b) = (cfg.integrator.t_start, cfg.integrator.t_end);
        assert!(Checkpoint::new(cfg.clone(), vec![a, a, b], vec![vec![0.0; m]; 3]).is_err());
        assert!(Checkpoint::new(cfg.clone(), vec![a, 0.5], vec![vec![0.0; m]; 2]).is_err());
        assert!(Checkpoint::new(cfg.clone(), vec![a, b], vec![vec![0.0; m], vec![f64::NAN; m]]).is_err());
        assert!(Checkpoint::new(cfg, vec![a, b], vec![vec![0.0; m + 1]; 2]).is_err());
    }
}
