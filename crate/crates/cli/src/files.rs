//! On-disk JSON documents: run configuration, tag sidecars, the simulation
//! manifest and the analysis summary. Their schemas live in `schemas/`.

use serde::{Deserialize, Serialize};

use pathbell::counting::{Mode, DEFAULT_WINDOW_PS};
use pathbell::sim::{validate_detectors, DetectorModel, Role, RunPlan, SourceConfig};
use pathbell::{Error, Result};

pub const CONFIG_VERSION: &str = "pathbell-config/1";
pub const MANIFEST_VERSION: &str = "pathbell-manifest/1";
pub const SUMMARY_VERSION: &str = "pathbell-summary/1";

fn default_window() -> u64 {
    DEFAULT_WINDOW_PS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    pub source: SourceConfig,
    pub detectors: Vec<DetectorModel>,
    pub plan: RunPlan,
    /// Coincidence window recorded for the analysis step, ps.
    #[serde(default = "default_window")]
    pub window_ps: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config version {:?}, expected {CONFIG_VERSION:?}",
                self.version
            )));
        }
        if self.window_ps == 0 {
            return Err(Error::InvalidConfig("window_ps must be > 0".into()));
        }
        self.source.validate()?;
        self.plan.validate()?;
        validate_detectors(self.plan.mode, &self.detectors)
    }
}

/// Sidecar written next to every tag file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagMeta {
    pub setting_id: String,
    pub theta: f64,
    pub delta: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub mode: Mode,
    pub trial: u32,
    pub role: Role,
    pub source: SourceConfig,
    pub detectors: Vec<DetectorModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub tags: String,
    pub meta: String,
    pub setting_id: String,
    pub trial: u32,
    pub role: Role,
    pub seed: u64,
    pub tag_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub trials: u32,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSummary {
    pub setting_id: String,
    pub theta: f64,
    pub delta: f64,
    /// `[p00, p01, p10, p11]` from counts pooled over trials.
    pub probabilities: [f64; 4],
    pub stderr: [f64; 4],
    pub total: u64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationSummary {
    pub theta: f64,
    pub delta: f64,
    pub theta_p: f64,
    pub delta_p: f64,
    /// Settings used for `(θ,δ), (θ,δ′), (θ′,δ), (θ′,δ′)`.
    pub setting_ids: [String; 4],
    /// Correlations from pooled counts, in the same order.
    pub e_values: [f64; 4],
    pub e_stderr: [f64; 4],
    /// `S` from pooled counts and its propagated binomial error.
    pub s_pooled: f64,
    pub s_pooled_stderr: f64,
    /// `S` averaged over trials, with the sample standard deviation and the
    /// standard error of the mean.
    pub s_mean: f64,
    pub s_std_dev: f64,
    pub s_stderr: f64,
    pub s_trials: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub version: String,
    pub mode: Mode,
    pub window_ps: u64,
    pub files: u64,
    pub trials: u32,
    pub settings: Vec<SettingSummary>,
    pub combinations: Vec<CombinationSummary>,
    /// Index into `combinations` of the largest `s_mean`, first on ties.
    pub best: Option<usize>,
}
