//! Experiment configuration (TOML) and reproducibility manifests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{derived_a, ModelParams};
use crate::observe::GreenMethod;
use crate::par::Exec;
use crate::scales::{DnSource, TimeScaleRule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config emit error: {0}")]
    Emit(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Exact,
    Dynamics,
    Traps,
    Clock,
    Age,
    Limits,
    #[default]
    All,
}

impl Suite {
    pub fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

/// Model section. Exactly one of `beta` and `alpha` sets the temperature
/// (`beta = sqrt(2 cbar)/alpha`); `a` overrides `abar sqrt(2 log N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub abar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    pub cbar: f64,
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<ModelParams, ConfigError> {
        let beta = match (self.beta, self.alpha) {
            (Some(b), None) => b,
            (None, Some(al)) if al > 0.0 => (2.0 * self.cbar).sqrt() / al,
            (None, Some(al)) => return Err(ConfigError::Invalid(format!("alpha = {al} must be positive"))),
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("set either beta or alpha, not both".into())),
            (None, None) => return Err(ConfigError::Invalid("one of beta or alpha is required".into())),
        };
        let p = ModelParams {
            n: self.n,
            beta,
            a: self.a.unwrap_or_else(|| derived_a(self.n, self.abar)),
            abar: self.abar,
            cbar: self.cbar,
            delta: self.delta,
            seed: self.seed,
        };
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenConfig {
    pub method: GreenMethod,
    pub samples: usize,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig { method: GreenMethod::default(), samples: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    pub eps: f64,
    pub paths: usize,
    pub bootstrap: usize,
    pub lambdas: Vec<f64>,
    /// Levy constant of the subordinator; defaults to `Gamma(alpha + 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy_const: Option<f64>,
}

impl Default for LimitConfig {
    fn default() -> Self {
        LimitConfig { eps: 1e-4, paths: 10_000, bootstrap: 1000, lambdas: vec![0.25, 0.5, 1.0], levy_const: None }
    }
}

/// Sample sizes of the verification suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Plan {
    /// System sizes of the exact identities.
    pub identity_ns: Vec<u32>,
    pub identity_envs: usize,
    pub gap_ns: Vec<u32>,
    pub gap_envs: usize,
    pub heat_n: u32,
    pub heat_bound_envs: usize,
    pub heat_annealed_envs: usize,
    pub sst_ns: Vec<u32>,
    pub sst_runs: usize,
    pub exit_n: u32,
    pub exit_runs: usize,
    pub exploration_count: usize,
    /// System sizes of the trend checks (Green, age, `d_N` fluctuations).
    pub trend_ns: Vec<u32>,
    /// Replicas per smaller `N` in the Green trend.
    pub green_replicas: usize,
    pub clock_replicas: usize,
    pub age_samples: usize,
    pub z_samples: usize,
}

impl Default for Plan {
    fn default() -> Self {
        Plan {
            identity_ns: vec![4, 6, 8],
            identity_envs: 20,
            gap_ns: (2..=8).collect(),
            gap_envs: 100,
            heat_n: 6,
            heat_bound_envs: 20,
            heat_annealed_envs: 200,
            sst_ns: vec![4, 6],
            sst_runs: 100_000,
            exit_n: 5,
            exit_runs: 10_000,
            exploration_count: 10_000,
            trend_ns: vec![16, 20, 24],
            green_replicas: 60,
            clock_replicas: 500,
            age_samples: 2000,
            z_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub suite: Suite,
    /// Horizon in units of `t_N`.
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    #[serde(default)]
    pub fresh_env_per_replica: bool,
    #[serde(default)]
    pub time_scale: TimeScaleRule,
    #[serde(default)]
    pub d_n_source: DnSource,
    /// Replicas for the Monte Carlo `d_N` when `d_n_source = "estimated"`.
    #[serde(default = "default_dn_replicas")]
    pub d_n_replicas: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_max_events")]
    pub max_events: f64,
    #[serde(default)]
    pub exec: Exec,
    #[serde(default)]
    pub green: GreenConfig,
    #[serde(default)]
    pub limits: LimitConfig,
    #[serde(default)]
    pub plan: Plan,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

fn one() -> f64 {
    1.0
}
fn default_replicas() -> usize {
    100
}
fn default_delta_grid() -> Vec<f64> {
    vec![0.5, 0.2, 0.1]
}
fn default_dn_replicas() -> usize {
    20
}
fn default_level() -> f64 {
    0.01
}
fn default_max_events() -> f64 {
    1e10
}
fn default_output() -> String {
    "out".into()
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.resolve()?;
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.horizon > 0.0) {
            return bad(format!("horizon = {} must be positive", self.horizon));
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if self.delta_grid.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return bad("delta_grid entries must lie in (0, 1)".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level = {} must lie in (0, 1)", self.level));
        }
        if self.green.samples == 0 {
            return bad("green.samples must be at least 1".into());
        }
        if let GreenMethod::Windowed { cutoff } = self.green.method {
            if !(cutoff > 0.0) {
                return bad("green cutoff must be positive".into());
            }
        }
        if !(self.limits.eps > 0.0) || self.limits.paths == 0 || self.limits.bootstrap == 0 {
            return bad("limits: eps, paths and bootstrap must be positive".into());
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        self.model.resolve().expect("validated")
    }

    /// SHA-256 of the canonical TOML emission, ignoring fields that cannot
    /// change results (output directory, execution mode).
    pub fn hash(&self) -> Result<String, ConfigError> {
        let canonical = ExperimentConfig { output_dir: String::new(), exec: Exec::default(), ..self.clone() };
        Ok(hex(&Sha256::digest(canonical.to_toml()?.as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to reproduce a run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    pub base_seed: u64,
    pub stream_policy: String,
    pub fresh_env_per_replica: bool,
    pub replicas: usize,
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Result<Manifest, ConfigError> {
        Ok(Manifest {
            config_hash: cfg.hash()?,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            base_seed: cfg.model.seed,
            stream_policy: "ChaCha8(base_seed) stream r for replica r; env 2^62, green 2^61, \
                            marks 2^60, limit 2^59, bootstrap 2^58, age 2^57, exploration 2^56, exact 2^55"
                .into(),
            fresh_env_per_replica: cfg.fresh_env_per_replica,
            replicas: cfg.replicas,
            config: cfg.clone(),
            warnings: cfg.params().regime_warnings(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
suite = "traps"
replicas = 50
delta_grid = [0.5, 0.2]

[model]
n = 20
alpha = 0.6
abar = 0.5
cbar = 0.575
delta = 0.3
seed = 7

[green]
method = { windowed = { cutoff = 6.0 } }
samples = 32
"#;

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.suite, Suite::Traps);
        assert_eq!(c.green.method, GreenMethod::Windowed { cutoff: 6.0 });
        let emitted = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&emitted).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), emitted);
        assert_eq!(c.hash().unwrap(), back.hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
        let p = c.params();
        assert!((p.alpha() - 0.6).abs() < 1e-12);
        assert!((p.a - 0.5 * (2.0 * 20f64.ln()).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn schema_violations() {
        assert!(ExperimentConfig::from_toml("replicas = 3").is_err());
        let both = SAMPLE.replace("alpha = 0.6", "alpha = 0.6\nbeta = 1.0");
        assert!(matches!(ExperimentConfig::from_toml(&both), Err(ConfigError::Invalid(_))));
        let unknown = SAMPLE.replace("replicas = 50", "replicas = 50\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml(&unknown), Err(ConfigError::Parse(_))));
        let bad_c = SAMPLE.replace("cbar = 0.575", "cbar = 0.9");
        assert!(ExperimentConfig::from_toml(&bad_c).is_err());
        let changed = SAMPLE.replace("seed = 7", "seed = 8");
        let (a, b) = (ExperimentConfig::from_toml(SAMPLE).unwrap(), ExperimentConfig::from_toml(&changed).unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn manifest_is_deterministic() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let m1 = serde_json::to_string(&Manifest::new(&c).unwrap()).unwrap();
        let m2 = serde_json::to_string(&Manifest::new(&c).unwrap()).unwrap();
        assert_eq!(m1, m2);
        let moved = ExperimentConfig { output_dir: "elsewhere".into(), exec: Exec::Sequential, ..c.clone() };
        assert_eq!(moved.hash().unwrap(), c.hash().unwrap());
        let reseeded = ExperimentConfig { model: ModelSpec { seed: c.model.seed + 1, ..c.model.clone() }, ..c.clone() };
        assert_ne!(reseeded.hash().unwrap(), c.hash().unwrap());
    }
}
