//! Run configuration in TOML. Every section and key is optional; unknown keys
//! are rejected. The resolved form (all defaults filled in) is what gets
//! echoed next to the outputs and hashed into their headers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{PredictiveConfig, RateStudyConfig};
use crate::functional::Functional;
use crate::models::{ModelParams, ModelSpec};
use crate::multilevel::AllocationConfig;
use crate::sve::{Level, VolParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Simulate from `data.truth`.
    Synthetic,
    /// CSV with a `y` column, e.g. the output of `simulate`.
    Observations,
    /// Price (or returns) CSV; observations are cumulative log returns.
    Prices,
}

/// Parameters of the data-generating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthConfig {
    #[serde(rename = "V0")]
    pub v0: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub nu: f64,
    pub rho: f64,
    pub r: f64,
    /// Observation noise used when simulating; `model.sigma_obs` when absent.
    /// Zero is allowed here.
    pub sigma_obs: Option<f64>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig { v0: 0.5, kappa: 0.5, lambda: 1.0, nu: 0.3, rho: -0.5, r: 0.0, sigma_obs: None }
    }
}

impl TruthConfig {
    pub fn params(&self, spec: &ModelSpec) -> ModelParams {
        let mut p = spec.params_with(
            VolParams { v0: self.v0, kappa: self.kappa, lambda: self.lambda, nu: self.nu },
            self.rho,
            self.r,
        );
        if let Some(s) = self.sigma_obs {
            p.sigma_obs = s;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub data_level: u32,
    pub truth: TruthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            horizon: 100,
            data_level: 6,
            truth: TruthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub particles: usize,
    /// Records of the single-level chain (`pmcmc`).
    pub iterations: usize,
    /// Level of the single-level chain.
    pub level: u32,
    /// Target RMSE for the multilevel allocation; ignored when `m` is set.
    pub epsilon: f64,
    /// Explicit chain lengths from `allocation.base_level` upwards.
    pub m: Option<Vec<usize>>,
    pub allocation: AllocationConfig,
    pub burn_in: f64,
    /// Per-coordinate random-walk scales; `step_size` is used for all when absent.
    pub step_sizes: Option<Vec<f64>>,
    pub step_size: f64,
    pub pilot_tune: bool,
    pub pilot_iterations: usize,
    pub pilot_rounds: usize,
    pub target_acceptance: f64,
    /// Functionals to estimate; parameter projections when empty.
    pub functionals: Vec<String>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            particles: 100,
            iterations: 1000,
            level: 3,
            epsilon: 0.1,
            m: None,
            allocation: AllocationConfig::default(),
            burn_in: 0.1,
            step_sizes: None,
            step_size: 0.1,
            pilot_tune: false,
            pilot_iterations: 200,
            pilot_rounds: 5,
            target_acceptance: 0.23,
            functionals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub root: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { root: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write per-level chain traces.
    pub chains: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), chains: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub max_lag: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { max_lag: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    /// Length of each predictive path; the observed length when 0.
    pub t_pred: usize,
    pub n_draws: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { t_pred: 0, n_draws: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    /// Serial execution everywhere.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataConfig,
    pub inference: InferenceConfig,
    pub seeds: SeedConfig,
    pub output: OutputConfig,
    pub rate_study: RateStudyConfig,
    pub analysis: AnalysisConfig,
    pub predict: PredictConfig,
    pub runtime: RuntimeConfig,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {x}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let d = &self.data;
        if d.horizon == 0 {
            return Err(Error::Config("data.T must be at least 1".into()));
        }
        Level::new(d.data_level).map_err(|e| Error::Config(format!("data.data_level: {e}")))?;
        if d.source != DataSource::Synthetic && d.path.is_none() {
            return Err(Error::Config("data.path is required unless data.source = \"synthetic\"".into()));
        }
        let t = &d.truth;
        if !(t.v0.is_finite()
            && t.kappa >= 0.0
            && t.lambda >= 0.0
            && t.nu >= 0.0
            && t.rho.abs() < 1.0
            && t.r.is_finite())
            || t.sigma_obs.is_some_and(|s| !(s >= 0.0 && s.is_finite()))
        {
            return Err(Error::Config("data.truth: need finite V0, non-negative kappa/lambda/nu and |rho| < 1".into()));
        }

        let i = &self.inference;
        if i.particles == 0 || i.iterations == 0 {
            return Err(Error::Config("inference.particles and inference.iterations must be at least 1".into()));
        }
        Level::new(i.level).map_err(|e| Error::Config(format!("inference.level: {e}")))?;
        if !(i.epsilon > 0.0 && i.epsilon < 1.0) {
            return Err(Error::Config(format!("inference.epsilon must lie in (0, 1), got {}", i.epsilon)));
        }
        if let Some(m) = &i.m {
            if m.len() < 2 || m.contains(&0) {
                return Err(Error::Config("inference.m needs at least two positive chain lengths".into()));
            }
        }
        i.allocation.validate()?;
        if !(0.0..1.0).contains(&i.burn_in) {
            return Err(Error::Config(format!("inference.burn_in must lie in [0, 1), got {}", i.burn_in)));
        }
        positive("inference.step_size", i.step_size)?;
        if let Some(s) = &i.step_sizes {
            if s.len() != self.model.dim() {
                return Err(Error::Config(format!(
                    "inference.step_sizes has {} entries, the model has {} parameters",
                    s.len(),
                    self.model.dim()
                )));
            }
            for x in s {
                positive("inference.step_sizes", *x)?;
            }
        }
        if !(i.target_acceptance > 0.0 && i.target_acceptance < 1.0) {
            return Err(Error::Config("inference.target_acceptance must lie in (0, 1)".into()));
        }
        self.functionals()?;

        let r = &self.rate_study;
        if r.replicates == 0 || r.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::Config("rate_study: need replicates ≥ 1 and epsilons in (0, 1)".into()));
        }
        r.allocation.validate()?;
        if self.analysis.max_lag == 0 {
            return Err(Error::Config("analysis.max_lag must be at least 1".into()));
        }
        if self.predict.n_draws == 0 {
            return Err(Error::Config("predict.n_draws must be at least 1".into()));
        }
        Ok(())
    }

    /// The configured functionals, or one projection per parameter.
    pub fn functionals(&self) -> Result<Vec<Functional>> {
        if self.inference.functionals.is_empty() {
            Ok(Functional::parameter_defaults(&self.model))
        } else {
            self.inference.functionals.iter().map(|s| Functional::parse(s)).collect()
        }
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.inference.step_sizes.clone().unwrap_or_else(|| vec![self.inference.step_size; self.model.dim()])
    }

    pub fn predictive(&self, observed_len: usize) -> PredictiveConfig {
        let t_pred = if self.predict.t_pred == 0 { observed_len } else { self.predict.t_pred };
        PredictiveConfig { t_pred, n_draws: self.predict.n_draws, max_lag: self.analysis.max_lag }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are representable in TOML")
    }

    /// SHA-256 (hex) of the resolved TOML without the output directory and
    /// runtime section, which do not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        c.runtime = RuntimeConfig::default();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml_str(&text)
}
