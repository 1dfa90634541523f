//! Experiment configuration in TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Parse errors carry the line and column reported by the TOML parser;
//! validation errors point at the line of the offending key when the key
//! appears in the source.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{SimConfig, DEFAULT_STABILITY_CAP};
use crate::error::{Error, Result};
use crate::measures::KMonitor;
use crate::nonlinearity::{NonlinSpec, RegLevel};
use crate::spectral::SpectralField;
use crate::verification::{BoundaryConfig, TestFunctional};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed of every random stream.
    pub seed: u64,
    /// Directory for result files.
    pub output: PathBuf,
    pub sim: SimBlock,
    pub sampler: SamplerBlock,
    pub verification: VerificationBlock,
    pub acceptance: AcceptanceBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 20_240_917,
            output: PathBuf::from("results"),
            sim: SimBlock::default(),
            sampler: SamplerBlock::default(),
            verification: VerificationBlock::default(),
            acceptance: AcceptanceBlock::default(),
        }
    }
}

/// Parameters of the `simulate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimBlock {
    pub modes: usize,
    pub grid: usize,
    pub dt: f64,
    pub horizon: f64,
    pub spec: NonlinSpec,
    pub n: u32,
    /// Mean level `c`.
    pub mean: f64,
    pub stability_cap: f64,
    /// Number of trajectories written by `simulate`.
    pub trajectories: usize,
    /// Keep every `stride`-th state in the trajectory output.
    pub stride: usize,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            modes: 64,
            grid: 128,
            dt: 1e-4,
            horizon: 0.1,
            spec: NonlinSpec::Log,
            n: 8,
            mean: 2.0,
            stability_cap: DEFAULT_STABILITY_CAP,
            trajectories: 1,
            stride: 10,
        }
    }
}

/// Ensemble sizes and measure parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerBlock {
    /// Importance-sampling ensemble size.
    pub count: usize,
    /// Replicas for dynamic experiments.
    pub replicas: usize,
    /// Mean level `c`.
    pub c: f64,
    pub spec: NonlinSpec,
    pub n_grid: Vec<u32>,
    pub alpha_grid: Vec<f64>,
    /// Positivity test for the limit measure in convergence scans.
    pub monitor: KMonitor,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        Self {
            count: 100_000,
            replicas: 10_000,
            c: 2.0,
            spec: NonlinSpec::Log,
            n_grid: vec![2, 8, 32, 128],
            alpha_grid: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            monitor: KMonitor::Grid,
        }
    }
}

/// Cylinder functional named in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    Const { value: f64 },
    Cos { mode: usize },
    Sin { mode: usize },
    ExpNegSq,
}

impl FunctionalSpec {
    pub fn build(&self, modes: usize) -> Result<TestFunctional> {
        let unit = |i: usize| {
            if i >= modes {
                Err(Error::Config(format!("functional mode {i} exceeds the {modes} available modes")))
            } else {
                Ok(SpectralField::unit(modes, i))
            }
        };
        Ok(match *self {
            Self::Const { value } => TestFunctional::Const(value),
            Self::Cos { mode } => TestFunctional::CosInner(unit(mode)?),
            Self::Sin { mode } => TestFunctional::SinInner(unit(mode)?),
            Self::ExpNegSq => TestFunctional::ExpNegSq,
        })
    }
}

/// One `(Φ, h = e_direction)` entry of an integration-by-parts matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbpPair {
    pub phi: FunctionalSpec,
    pub direction: usize,
}

impl IbpPair {
    fn new(phi: FunctionalSpec, direction: usize) -> Self {
        Self { phi, direction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationBlock {
    /// Pairs for the regularized Gibbs and limit identities.
    pub gibbs_pairs: Vec<IbpPair>,
    /// Pairs for the unconditioned identity.
    pub unconditioned_pairs: Vec<IbpPair>,
    pub quadrature_nodes: usize,
    pub samples_per_node: usize,
    /// Kernel bandwidth; nonpositive selects Silverman's rule.
    pub bandwidth: f64,
    /// Time steps of the generator quotient.
    pub generator_dts: Vec<f64>,
}

impl Default for VerificationBlock {
    fn default() -> Self {
        use FunctionalSpec::*;
        Self {
            gibbs_pairs: vec![
                IbpPair::new(Const { value: 1.0 }, 1),
                IbpPair::new(Cos { mode: 1 }, 2),
                IbpPair::new(ExpNegSq, 2),
                IbpPair::new(Sin { mode: 2 }, 1),
            ],
            unconditioned_pairs: vec![
                IbpPair::new(Const { value: 1.0 }, 1),
                IbpPair::new(ExpNegSq, 2),
                IbpPair::new(Cos { mode: 1 }, 0),
            ],
            quadrature_nodes: 32,
            samples_per_node: 4096,
            bandwidth: 0.0,
            generator_dts: vec![1e-3, 5e-4, 2.5e-4],
        }
    }
}

impl VerificationBlock {
    pub fn boundary(&self, scale: f64) -> BoundaryConfig {
        BoundaryConfig {
            nodes: self.quadrature_nodes,
            samples_per_node: scaled(self.samples_per_node, scale, 64),
            bandwidth: self.bandwidth,
        }
    }
}

/// Global size multiplier for the acceptance suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceBlock {
    pub scale: f64,
}

impl Default for AcceptanceBlock {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

/// `count · scale`, rounded, and at least `floor`.
pub fn scaled(count: usize, scale: f64, floor: usize) -> usize {
    ((count as f64 * scale).round() as usize).max(floor.min(count))
}

impl ExperimentConfig {
    /// Parse and validate TOML text. `origin` names the source in messages.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(locate(src, origin, &msg)),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: cannot read config: {e}", path.display())))?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn scale(&self) -> f64 {
        self.acceptance.scale
    }

    /// The simulation block as a validated [`SimConfig`].
    pub fn sim_config(&self) -> Result<SimConfig> {
        let b = &self.sim;
        let mut cfg = SimConfig::new(b.modes, b.grid, b.dt, b.horizon, b.spec, reg(b.n, "sim.n")?)
            .with_mean(b.mean)
            .with_seed(self.seed);
        cfg.stability_cap = b.stability_cap;
        cfg.validate().map_err(|e| Error::Config(format!("[sim] {}", plain(e))))?;
        Ok(cfg)
    }

    pub fn n_grid(&self) -> Result<Vec<RegLevel>> {
        self.sampler.n_grid.iter().map(|&n| reg(n, "sampler.n_grid")).collect()
    }

    pub fn alpha_specs(&self) -> Result<Vec<NonlinSpec>> {
        self.sampler
            .alpha_grid
            .iter()
            .map(|&a| NonlinSpec::power(a).map_err(|e| Error::Config(format!("[sampler] alpha_grid: {}", plain(e)))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config()?;
        if self.sim.stride == 0 {
            return Err(Error::Config("[sim] stride must be at least 1".into()));
        }
        let s = &self.sampler;
        if s.count < 2 || s.replicas < 2 {
            return Err(Error::Config("[sampler] count and replicas must be at least 2".into()));
        }
        if !(s.c.is_finite() && s.c > 0.0) {
            return Err(Error::Config(format!("[sampler] c must be positive, got {}", s.c)));
        }
        s.spec.validate().map_err(|e| Error::Config(format!("[sampler] spec: {}", plain(e))))?;
        if s.n_grid.is_empty() {
            return Err(Error::Config("[sampler] n_grid must not be empty".into()));
        }
        self.n_grid()?;
        self.alpha_specs()?;
        let v = &self.verification;
        if v.quadrature_nodes == 0 || v.samples_per_node < 2 {
            return Err(Error::Config("[verification] quadrature_nodes and samples_per_node must be positive".into()));
        }
        if v.generator_dts.len() < 2 || v.generator_dts.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("[verification] generator_dts needs at least two positive steps".into()));
        }
        for p in v.gibbs_pairs.iter().chain(&v.unconditioned_pairs) {
            p.phi.build(self.sim.modes).map_err(|e| Error::Config(format!("[verification] {}", plain(e))))?;
            if p.direction >= self.sim.modes {
                return Err(Error::Config(format!("[verification] direction {} exceeds the mode count", p.direction)));
            }
        }
        if !(self.acceptance.scale.is_finite() && self.acceptance.scale > 0.0) {
            return Err(Error::Config(format!("[acceptance] scale must be positive, got {}", self.acceptance.scale)));
        }
        Ok(())
    }
}

fn reg(n: u32, field: &str) -> Result<RegLevel> {
    RegLevel::new(n).map_err(|_| Error::Config(format!("{field}: regularization level must be at least 1")))
}

fn plain(e: Error) -> String {
    match e {
        Error::Domain(m) | Error::Config(m) | Error::Precondition(m) => m,
    }
}

/// Prefix a validation message `"[section] key..."` with the line of `key`
/// inside `[section]` of `src`, when present.
fn locate(src: &str, origin: &str, msg: &str) -> String {
    let section = msg.strip_prefix('[').and_then(|r| r.split_once(']')).map(|(s, _)| s);
    let key = section.and_then(|s| {
        let rest = msg[s.len() + 2..].trim_start();
        let k: String = rest.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
        (!k.is_empty()).then_some(k)
    });
    let mut current = String::new();
    let mut header = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = h.trim().to_string();
            if section == Some(current.as_str()) && header.is_none() {
                header = Some(i);
            }
            continue;
        }
        let Some((k, _)) = t.split_once('=') else { continue };
        if section == Some(current.as_str()) && key.as_deref() == Some(k.trim()) {
            return format!("{origin}:{}: {msg}", i + 1);
        }
    }
    match header {
        Some(i) => format!("{origin}:{}: {msg}", i + 1),
        None => format!("{origin}: {msg}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml_str("", "x").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text, "x").unwrap(), cfg);
    }

    #[test]
    fn stability_violation_names_the_line() {
        let src = "seed = 3\n\n[sim]\nspec = { kind = \"power\", alpha = 2.0 }\nn = 8\ndt = 0.01\n";
        let err = ExperimentConfig::from_toml_str(src, "bad.toml").unwrap_err().to_string();
        assert!(err.contains("bad.toml:6:"), "{err}");
        assert!(err.contains("stability cap"), "{err}");
    }

    #[test]
    fn truncated_file_reports_location() {
        let src = "seed = 3\n[sampler]\nn_grid = [2, 8,";
        let err = ExperimentConfig::from_toml_str(src, "cut.toml").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[sim]\nmdoes = 3\n", "x").is_err());
    }

    #[test]
    fn scaling_keeps_a_floor() {
        assert_eq!(scaled(100_000, 0.01, 64), 1000);
        assert_eq!(scaled(1000, 0.001, 64), 64);
        assert_eq!(scaled(10, 0.001, 64), 10);
    }
}
