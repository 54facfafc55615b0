use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lesion_cascade::cascade::BenchmarkConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;

/// Settings shared by every subcommand. Precedence, lowest first: built-in
/// defaults, the `--config` JSON file, command-line flags. The top-level
/// `seed` replaces every per-component seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Rayon worker threads; all logical cores when absent.
    pub workers: Option<usize>,
    #[serde(flatten)]
    pub pipeline: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED, workers: None, pipeline: BenchmarkConfig::default() }
    }
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub iou_thresh: Option<f64>,
    pub score_thresh: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        if !path.exists() {
            return Err(CliError::Missing { what: "config file", path: path.to_path_buf() }.into());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::BadConfig { path: path.to_path_buf(), reason: e.to_string() }.into())
    }

    pub fn resolve(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = Self::load(path)?;
        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        if let Some(w) = o.workers {
            cfg.workers = Some(w);
        }
        if let Some(t) = o.iou_thresh {
            let c = &mut cfg.pipeline.cascade;
            c.criterion = c.criterion.with_threshold(t);
            c.detection.criterion = c.detection.criterion.with_threshold(t);
        }
        if let Some(t) = o.score_thresh {
            cfg.pipeline.cascade.inference.score_threshold = t;
        }
        cfg.pipeline = cfg.pipeline.with_seed(cfg.seed);
        if cfg.workers == Some(0) {
            return Err(CliError::Conflict("workers must be at least 1".into()).into());
        }
        cfg.pipeline.validate().map_err(|e| CliError::Conflict(e.to_string()))?;
        Ok(cfg)
    }

    /// Canonical JSON; what gets echoed and hashed.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
