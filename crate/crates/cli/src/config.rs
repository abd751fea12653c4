//! Run configuration file (TOML). Every table rejects unknown keys and all
//! values are checked before any computation starts.

use std::fmt;
use std::path::PathBuf;

use beamloop::registry::{builtin_block, builtin_law, BlockParams};
use beamloop::{BeamParams, ClosedLoopConfig, IntegratorSettings, SpringDamperLaw};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Certify,
    Simulate,
    Spectrum,
    Skew,
    Convergence,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Certify => "certify",
            Mode::Simulate => "simulate",
            Mode::Spectrum => "spectrum",
            Mode::Skew => "skew",
            Mode::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// When present it must agree with the mode given on the command line.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub beam: BeamSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default = "TipSection::rotational")]
    pub rotational: TipSection,
    #[serde(default = "TipSection::translational")]
    pub translational: TipSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub convergence: ConvergenceSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    pub rho: f64,
    pub lambda: f64,
    pub length: f64,
    pub tip_inertia: f64,
    pub tip_mass: f64,
}

impl Default for BeamSection {
    fn default() -> Self {
        Self { rho: 1.0, lambda: 1.0, length: 1.0, tip_inertia: 0.1, tip_mass: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub elements: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { elements: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub law: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: String,
    /// Row-major; `a`, `b`, `p` default to the planar block
    /// `A = [[-1, 1], [-1, -1]]`, `B = (0, 1)`, `P = I`.
    #[serde(default)]
    pub a: Option<Vec<f64>>,
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TipSection {
    pub damper: LawSpec,
    pub spring: LawSpec,
    pub block: BlockSpec,
}

impl TipSection {
    fn default_tip() -> Self {
        Self {
            damper: LawSpec { law: "tanh".into(), params: vec![1.0, 2.0] },
            spring: LawSpec { law: "cubic".into(), params: vec![1.0, 1.0] },
            block: BlockSpec { kind: "cubic-drift".into(), a: None, b: None, p: None },
        }
    }

    fn rotational() -> Self {
        Self::default_tip()
    }

    fn translational() -> Self {
        Self::default_tip()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub dt: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub record_every: usize,
    pub energy_tol: f64,
    pub strict_energy: bool,
    /// Initial data: first clamped-free mode scaled so `u(L)` is this
    /// fraction of the beam length, released from rest.
    pub tip_fraction: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            record_every: 10,
            energy_tol: 1e-8,
            strict_energy: false,
            tip_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub radius: f64,
    pub samples: usize,
    /// Level the block storages must exceed on the sample sphere; defaults
    /// to the energy of the configured initial data.
    pub storage_threshold: Option<f64>,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self { radius: 2.0, samples: 400, storage_threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub elements: Vec<usize>,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self { elements: vec![8, 16, 32, 64] }
    }
}

/// Configuration problems; `line`/`column` are 1-based when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl ConfigError {
    fn plain(message: impl Into<String>) -> Self {
        Self { message: message.into(), line: None, column: None }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => {
                    let (l, c) = line_column(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError { message: e.message().to_string(), line, column }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need a numerical solve.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::plain(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.mesh.elements == 0 {
            return Err(ConfigError::plain("mesh.elements must be >= 1"));
        }
        if self.convergence.elements.len() < 2 || self.convergence.elements.contains(&0) {
            return Err(ConfigError::plain("convergence.elements needs at least two positive mesh sizes"));
        }
        let c = &self.certify;
        if !(c.radius.is_finite() && c.radius > 0.0) {
            return Err(ConfigError::plain("certify.radius must be positive"));
        }
        if c.storage_threshold.is_some_and(|h| !h.is_finite()) {
            return Err(ConfigError::plain("certify.storage_threshold must be finite"));
        }
        let tf = self.integrator.tip_fraction;
        if !tf.is_finite() {
            return Err(ConfigError::plain("integrator.tip_fraction must be finite"));
        }
        self.beam_params()?;
        self.settings()?;
        self.loop_config()?;
        Ok(())
    }

    pub fn beam_params(&self) -> Result<BeamParams<f64>, ConfigError> {
        let b = &self.beam;
        BeamParams::new(b.rho, b.lambda, b.length, b.tip_inertia, b.tip_mass)
            .map_err(|e| ConfigError::plain(format!("beam: {e}")))
    }

    pub fn settings(&self) -> Result<IntegratorSettings<f64>, ConfigError> {
        let i = &self.integrator;
        let mut s = IntegratorSettings::new(i.dt, i.t_end).map_err(|e| ConfigError::plain(format!("integrator: {e}")))?;
        s.newton_tol = i.newton_tol;
        s.newton_max_iter = i.newton_max_iter;
        s.record_every = i.record_every;
        s.energy_tol = i.energy_tol;
        s.strict_energy = i.strict_energy;
        s.validate().map_err(|e| ConfigError::plain(format!("integrator: {e}")))?;
        Ok(s)
    }

    pub fn spring_damper(&self, tip: &TipSection, side: &str) -> Result<SpringDamperLaw<f64>, ConfigError> {
        let damper = builtin_law(&tip.damper.law, &tip.damper.params)
            .map_err(|e| ConfigError::plain(format!("{side}.damper: {e}")))?;
        let spring = builtin_law(&tip.spring.law, &tip.spring.params)
            .map_err(|e| ConfigError::plain(format!("{side}.spring: {e}")))?;
        Ok(SpringDamperLaw::new(damper, spring))
    }

    pub fn block(&self, spec: &BlockSpec, side: &str) -> Result<beamloop::PassiveBlock<f64>, ConfigError> {
        let params = match (&spec.a, &spec.b, &spec.p) {
            (None, None, None) => BlockParams::planar_default(),
            (Some(a), Some(b), Some(p)) => {
                BlockParams::from_rows(a, b, p).map_err(|e| ConfigError::plain(format!("{side}.block: {e}")))?
            }
            _ => return Err(ConfigError::plain(format!("{side}.block: give all of a, b, p or none"))),
        };
        builtin_block(&spec.kind, &params).map_err(|e| ConfigError::plain(format!("{side}.block: {e}")))
    }

    pub fn loop_config(&self) -> Result<ClosedLoopConfig<f64>, ConfigError> {
        Ok(ClosedLoopConfig {
            beam: self.beam_params()?,
            sd_rotational: self.spring_damper(&self.rotational, "rotational")?,
            sd_translational: self.spring_damper(&self.translational, "translational")?,
            block_rotational: self.block(&self.rotational.block, "rotational")?,
            block_translational: self.block(&self.translational.block, "translational")?,
        })
    }
}
