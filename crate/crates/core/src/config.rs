//! Pipeline configuration, loaded from a TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. `LEXHOLD_WORK_DIR` overrides `paths.work_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probes::ProbeConfig;
use crate::split::{SplitParams, DEFAULT_MASK_TOKEN};

pub const WORK_DIR_ENV: &str = "LEXHOLD_WORK_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", .path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<PathBuf>,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub min_freq_heldout: u64,
    pub min_freq_exposed: u64,
    pub n_heldout: usize,
    pub n_exposed: usize,
    pub seed: u64,
    pub mask_token: String,
    /// Keep only instances with this POS tag (instances without a tag are kept).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos_filter: Option<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let p = SplitParams::default();
        Self {
            min_freq_heldout: p.min_freq_heldout,
            min_freq_exposed: p.min_freq_exposed,
            n_heldout: p.n_heldout,
            n_exposed: p.n_exposed,
            seed: p.seed,
            mask_token: DEFAULT_MASK_TOKEN.to_string(),
            pos_filter: None,
        }
    }
}

impl SplitConfig {
    pub fn params(&self) -> SplitParams {
        SplitParams {
            min_freq_heldout: self.min_freq_heldout,
            min_freq_exposed: self.min_freq_exposed,
            n_heldout: self.n_heldout,
            n_exposed: self.n_exposed,
            seed: self.seed,
            mask_token: self.mask_token.clone(),
        }
    }
}

/// Which training set forms the k-NN reference space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSet {
    Filtered,
    Standard,
}

impl std::str::FromStr for ReferenceSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "filtered" => Ok(Self::Filtered),
            "standard" => Ok(Self::Standard),
            other => Err(format!("unknown reference set `{other}` (expected filtered or standard)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub k: usize,
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub reference: ReferenceSet,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self { k: crate::probes::DEFAULT_K, l2: p.l2, max_iter: p.max_iter, tol: p.tol, reference: ReferenceSet::Filtered }
    }
}

impl ProbeSection {
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig { l2: self.l2, max_iter: self.max_iter, tol: self.tol }
    }
}

/// Hyperparameters handed to the runner verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub model: String,
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub class_weight_metaphorical: f64,
    pub validation_fraction: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            model: "roberta-base".into(),
            epochs: 5,
            batch_size: 32,
            learning_rate: 4e-5,
            weight_decay: 0.02,
            warmup_fraction: 0.1,
            class_weight_metaphorical: 3.0,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerSection {
    /// Program and leading arguments; the stage and file flags are appended.
    pub command: Vec<String>,
    pub timeout_secs: u64,
    /// Concurrent fine-tuning runs during a seed sweep.
    pub parallelism: usize,
    /// Seed of the analysed model when no sweep is configured.
    pub seed: u64,
    pub sweep_seeds: Vec<u64>,
    pub hyper: Hyperparams,
}

impl Default for RunnerSection {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            timeout_secs: 6 * 3600,
            parallelism: 1,
            seed: 42,
            sweep_seeds: Vec::new(),
            hyper: Hyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub runner: RunnerSection,
}

impl PipelineConfig {
    /// Parses TOML text; relative paths are joined onto `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Loads a config file and applies the work-dir environment override.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(parent).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = Self::from_toml_str(&text, &base)?;
        if let Some(dir) = std::env::var_os(WORK_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.paths.work_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.train);
        join(&mut self.paths.test);
        if let Some(f) = self.paths.freq.as_mut() {
            join(f);
        }
        join(&mut self.paths.work_dir);
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (what, p) in [("train corpus", Some(&self.paths.train)), ("test corpus", Some(&self.paths.test)), ("frequency table", self.paths.freq.as_ref())] {
            if let Some(p) = p {
                if !p.is_file() {
                    return invalid(format!("{what} `{}` does not exist", p.display()));
                }
            }
        }
        let s = &self.split;
        if s.seed == 0 {
            return invalid("split.seed must be positive".into());
        }
        if s.n_heldout == 0 || s.n_exposed == 0 {
            return invalid("split.n_heldout and split.n_exposed must be positive".into());
        }
        if s.mask_token.trim().is_empty() {
            return invalid("split.mask_token must not be blank".into());
        }
        let p = &self.probe;
        if p.k == 0 {
            return invalid("probe.k must be positive".into());
        }
        if !(p.l2.is_finite() && p.l2 > 0.0) || !(p.tol.is_finite() && p.tol > 0.0) || p.max_iter == 0 {
            return invalid("probe.l2, probe.tol and probe.max_iter must be positive".into());
        }
        let r = &self.runner;
        if r.seed == 0 || r.sweep_seeds.contains(&0) {
            return invalid("runner seeds must be positive".into());
        }
        let mut seen = r.sweep_seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return invalid("runner.sweep_seeds has duplicates".into());
        }
        if r.parallelism == 0 || r.timeout_secs == 0 {
            return invalid("runner.parallelism and runner.timeout_secs must be positive".into());
        }
        let h = &r.hyper;
        if h.epochs == 0 || h.batch_size == 0 {
            return invalid("runner.hyper epochs and batch_size must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", h.learning_rate),
            ("weight_decay", h.weight_decay),
            ("warmup_fraction", h.warmup_fraction),
            ("class_weight_metaphorical", h.class_weight_metaphorical),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("runner.hyper.{name} must be positive"));
            }
        }
        if !(h.validation_fraction > 0.0 && h.validation_fraction < 1.0) {
            return invalid("runner.hyper.validation_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Canonical JSON, used for provenance and stage hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
