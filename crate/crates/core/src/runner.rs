//! Process boundary to the model runner.
//!
//! The runner is invoked as
//! `<command...> finetune|predict|embed --config <json> --in <jsonl> --out <path>`.
//! `finetune` writes a checkpoint directory at `--out` containing
//! `summary.json`; `predict` writes prediction JSONL; `embed` writes
//! embedding JSONL. Everything the runner prints goes to a per-invocation
//! log file, which is kept when the invocation fails.

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Hyperparams, RunnerSection};
use crate::probes::EmbeddingKind;

pub const SUMMARY_FILE: &str = "summary.json";
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("no runner command configured")]
    NotConfigured,
    #[error("failed to start runner `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("runner {stage} exited with {status}; see {}", .log.display())]
    Exit { stage: Stage, status: String, log: PathBuf },
    #[error("runner {stage} timed out after {secs}s; see {}", .log.display())]
    Timeout { stage: Stage, secs: u64, log: PathBuf },
    #[error("runner {stage} succeeded but wrote nothing to {}", .path.display())]
    MissingOutput { stage: Stage, path: PathBuf },
    #[error("bad run summary {}: {reason}", .path.display())]
    Summary { path: PathBuf, reason: String },
    #[error("runner I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Finetune,
    Predict,
    Embed,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Finetune => "finetune",
            Stage::Predict => "predict",
            Stage::Embed => "embed",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "finetune" => Ok(Stage::Finetune),
            "predict" => Ok(Stage::Predict),
            "embed" => Ok(Stage::Embed),
            other => Err(format!("unknown runner stage `{other}`")),
        }
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub stage: Stage,
    pub seed: u64,
    #[serde(flatten)]
    pub hyper: Hyperparams,
    /// Pipeline-level mask literal; the runner maps it to the model's own mask token.
    pub mask_placeholder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EmbeddingKind>,
}

impl RunnerRequest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("request serializes");
        s.push('\n');
        s
    }
}

/// Hex sha256 of the config file bytes; runners echo it in their summary.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `summary.json` written by `finetune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_hash: String,
    #[serde(default)]
    pub best_epoch: Option<u32>,
    pub validation: ValidationScores,
}

impl RunSummary {
    pub fn read(dir: &Path) -> Result<Self, RunnerError> {
        let path = dir.join(SUMMARY_FILE);
        let bad = |reason: String| RunnerError::Summary { path: path.clone(), reason };
        let text = std::fs::read_to_string(&path).map_err(|e| bad(e.to_string()))?;
        let s: RunSummary = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let v = s.validation;
        if [v.precision, v.recall, v.f1].iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(bad("validation scores must lie in [0, 1]".into()));
        }
        Ok(s)
    }
}

/// A configured runner command plus where its logs go.
#[derive(Debug, Clone)]
pub struct Runner {
    command: Vec<String>,
    timeout: Duration,
    log_dir: PathBuf,
}

impl Runner {
    pub fn new(section: &RunnerSection, log_dir: impl Into<PathBuf>) -> Result<Self, RunnerError> {
        if section.command.is_empty() || section.command[0].trim().is_empty() {
            return Err(RunnerError::NotConfigured);
        }
        Ok(Self {
            command: section.command.clone(),
            timeout: Duration::from_secs(section.timeout_secs),
            log_dir: log_dir.into(),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Runs one invocation. `tag` names the config and log files.
    /// Returns the config hash the runner should report.
    pub fn invoke(&self, tag: &str, req: &RunnerRequest, input: &Path, output: &Path) -> Result<String, RunnerError> {
        std::fs::create_dir_all(&self.log_dir)?;
        if let Some(parent) = output.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let cfg_path = self.log_dir.join(format!("{tag}.config.json"));
        let log_path = self.log_dir.join(format!("{tag}.log"));
        let cfg_text = req.to_json();
        std::fs::write(&cfg_path, &cfg_text)?;

        let log = File::create(&log_path)?;
        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .arg(req.stage.as_str())
            .arg("--config")
            .arg(&cfg_path)
            .arg("--in")
            .arg(input)
            .arg("--out")
            .arg(output)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log);
        log::info!("runner {} [{tag}]: {} -> {}", req.stage, input.display(), output.display());
        let mut child =
            cmd.spawn().map_err(|source| RunnerError::Spawn { program: self.command[0].clone(), source })?;

        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(RunnerError::Timeout { stage: req.stage, secs: self.timeout.as_secs(), log: log_path });
            }
            std::thread::sleep(POLL);
        };
        if !status.success() {
            return Err(RunnerError::Exit { stage: req.stage, status: status.to_string(), log: log_path });
        }
        if !output.exists() {
            return Err(RunnerError::MissingOutput { stage: req.stage, path: output.into() });
        }
        Ok(config_hash(cfg_text.as_bytes()))
    }

    /// Fine-tunes and returns the run summary, checking it echoes this run.
    pub fn finetune(&self, tag: &str, req: &RunnerRequest, train: &Path, out_dir: &Path) -> Result<RunSummary, RunnerError> {
        debug_assert_eq!(req.stage, Stage::Finetune);
        let hash = self.invoke(tag, req, train, out_dir)?;
        let summary = RunSummary::read(out_dir)?;
        if summary.config_hash != hash || summary.seed != req.seed {
            return Err(RunnerError::Summary {
                path: out_dir.join(SUMMARY_FILE),
                reason: "summary does not match the submitted config".into(),
            });
        }
        Ok(summary)
    }
}
